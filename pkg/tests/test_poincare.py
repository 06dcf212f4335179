import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relpend import DomainError
from relpend.model import free_model, pendulum
from relpend.poincare import (
    MOSER_LABEL,
    TwistFactor,
    compose_factors,
    contractible_loop_integral,
    factor_chain,
    factor_map,
    loop_exactness,
    moser_hypotheses_report,
    poincare,
    poincare_map,
    twist_derivative,
)

SPEC = pendulum(1.0, 1.0, forcing=((1, 0.5, 0.0),))


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 1), st.floats(-5, 5))
def test_period_map_commutes_with_lift(q, p):
    a, Ja = poincare_map(SPEC, (q, p))
    b, Jb = poincare_map(SPEC, (q + 1.0, p))
    assert np.allclose(b - a, [1.0, 0.0], atol=1e-10)
    assert np.allclose(Ja, Jb, atol=1e-9)


def test_period_map_of_free_particle():
    m = poincare(free_model(2.0))
    z1, J = m.with_jacobian((0.1, 0.75))
    assert np.allclose(z1, [0.1 + 1.2, 0.75], atol=1e-12)
    # dq1/dp0 = T (1 + p^2)^(-3/2)
    assert J[0, 1] == pytest.approx(2.0 / 1.25**3, rel=1e-10)
    assert twist_derivative(m, (0.1, 0.75)) == pytest.approx(J[0, 1])


def test_factor_duration_is_bounded_by_twist_limit():
    spec = pendulum(4.0, 4.0)  # bound pi / 2
    with pytest.raises(DomainError, match="pi/sqrt"):
        TwistFactor(spec, 0.0, 1.6)
    with pytest.raises(DomainError):
        factor_chain(spec, 0)
    assert len(factor_chain(spec, 3)) == 3


def test_factor_map_checks_model():
    fac = TwistFactor(SPEC, 0.0, 0.5)
    assert np.allclose(factor_map(fac, SPEC, 0.1, 0.2), fac(0.1, 0.2))
    with pytest.raises(ValueError):
        factor_map(fac, pendulum(2.0), 0.1, 0.2)


@pytest.mark.parametrize("N", [1, 2, 5])
def test_composition_of_factors_is_the_period_map(N):
    rep = compose_factors(SPEC, N)
    assert rep.max_discrepancy < 1e-9
    assert rep.n_points == 25


def test_composition_with_mean_forcing():
    spec = pendulum(1.0, 2.0, forcing=((2, 0.3, 0.1),), fbar=0.4)
    assert compose_factors(spec, 3).max_discrepancy < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1), st.floats(-100, 100))
def test_factor_twist_and_momentum_bound(Q, P):
    fac = TwistFactor(SPEC, 0.25, 0.5)
    z, J, _ = fac.evaluate(Q, P, jacobian=True)
    assert J[0, 1] > 0
    assert abs(z[1] - P) <= fac.momentum_bound
    assert fac.rho_minus < z[0] - Q < fac.rho_plus


def test_factor_increment_tends_to_duration():
    fac = TwistFactor(SPEC, 0.0, 0.5)
    assert fac(0.0, 1e7)[0] == pytest.approx(0.5, abs=1e-6)
    assert fac(0.0, -1e7)[0] == pytest.approx(-0.5, abs=1e-6)
    assert fac.twist_margin([0.0, 0.5], [-10.0, 0.0, 10.0]) > 0


def test_loop_integral_zero_for_zero_mean():
    m = poincare(SPEC)
    assert abs(loop_exactness(m, 1.5)) < 1e-9


def test_loop_integral_picks_up_the_mean():
    # the net momentum gain T fbar is swept over a circle of length S
    spec = free_model(2.0, fbar=0.25, S=1.0)
    assert loop_exactness(poincare(spec), 3.0) == pytest.approx(0.5, abs=1e-9)


def test_loop_sampling_floor():
    with pytest.raises(DomainError):
        loop_exactness(poincare(SPEC), 1.0, n_samples=100)


def test_contractible_loops_enclose_preserved_area():
    m = poincare(pendulum(1.0, 1.0, forcing=((1, 0.5, 0.0),), fbar=0.3))
    assert abs(contractible_loop_integral(m, (0.2, 0.5), 0.1)) < 1e-9


def test_moser_report_contents():
    rep = moser_hypotheses_report(SPEC, deltas=(0.1, 0.9))
    assert rep["label"] == MOSER_LABEL
    assert rep["alpha_1"] == -0.5 and rep["alpha_3"] == -4.5
    assert rep["abs_alpha_prime_range"] == [1.0, 3.0]
    assert rep["c0"] == 3.0
    assert "sup_norm" in rep["residuals"][0]
    assert "skipped" in rep["residuals"][1]
    assert math.isclose(rep["alpha_samples"]["alpha"][0], -0.5)
