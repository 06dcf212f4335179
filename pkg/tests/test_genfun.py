import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relpend import DomainError
from relpend.genfun import (
    GeneratingFunction,
    fd_step,
    free_mixed_derivative,
    free_value,
    second_derivatives_from_jacobian,
)
from relpend.model import free_model, pendulum
from relpend.poincare import TwistFactor

SPEC = pendulum(1.0, 2.0, forcing=((1, 0.3, 0.0),))
GF = GeneratingFunction(TwistFactor(SPEC, 0.5, 1.0))
FREE = GeneratingFunction(TwistFactor(free_model(), 0.0, 1.0))

increments = st.floats(-0.95, 0.95)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), increments)
def test_shot_reaches_target(theta, d):
    r = GF.shoot(theta, theta + d)
    z = GF.factor(theta, r.P0)
    assert z[0] == pytest.approx(theta + d, abs=1e-10)
    assert z[1] == pytest.approx(r.P1, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), increments)
def test_first_derivatives_are_the_momenta(theta, d):
    e = fd_step(GF.L, d)
    d1, d2 = GF.derivatives(theta, theta + d)
    fd1 = (GF.value(theta + e, theta + d) - GF.value(theta - e, theta + d)) / (2 * e)
    fd2 = (GF.value(theta, theta + d + e) - GF.value(theta, theta + d - e)) / (2 * e)
    assert fd1 == pytest.approx(d1, rel=1e-5, abs=1e-5)
    assert fd2 == pytest.approx(d2, rel=1e-5, abs=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 1), st.floats(-0.9, 0.9))
def test_second_derivatives_from_jacobian(theta, d):
    h11, h12, h22 = GF.second_derivatives(theta, theta + d)
    e = fd_step(GF.L, d)
    p0 = lambda a, b: GF.shoot(a, b).P0  # noqa: E731
    p1 = lambda a, b: GF.shoot(a, b).P1  # noqa: E731
    # d11 h = -dP0/dtheta, d12 h = -dP0/dtheta1, d22 h = dP1/dtheta1
    assert -(p0(theta + e, theta + d) - p0(theta - e, theta + d)) / (2 * e) == pytest.approx(h11, rel=1e-4, abs=1e-6)
    assert -(p0(theta, theta + d + e) - p0(theta, theta + d - e)) / (2 * e) == pytest.approx(h12, rel=1e-4)
    assert (p1(theta, theta + d + e) - p1(theta, theta + d - e)) / (2 * e) == pytest.approx(h22, rel=1e-4, abs=1e-6)
    assert h12 < 0


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1), increments, st.integers(-3, 3))
def test_periodicity(theta, d, k):
    assert GF.value(theta + k, theta + d + k) == pytest.approx(GF.value(theta, theta + d), abs=1e-9)


@pytest.mark.parametrize("d", [-0.99, -0.5, 0.0, 0.3, 0.99])
def test_free_closed_forms(d):
    assert FREE.value(0.1, 0.1 + d) == pytest.approx(float(free_value(1.0, d)), abs=1e-10)
    _, h12, _ = FREE.second_derivatives(0.1, 0.1 + d)
    assert h12 == pytest.approx(float(free_mixed_derivative(1.0, d)), rel=1e-8)


def test_band_is_enforced():
    lo, hi = GF.band
    assert hi == pytest.approx(1.0 - 1e-3)
    assert GF.in_band(0.0, hi) and not GF.in_band(0.0, 1.0)
    with pytest.raises(DomainError, match="admissible band"):
        GF.shoot(0.0, 1.0)


def test_lattice_cache():
    gf = GeneratingFunction(TwistFactor(SPEC, 0.0, 1.0), lattice_step=0.125)
    a = gf.shoot(0.25, 0.75)
    n = gf.n_shots
    assert gf.shoot(0.25, 0.75) is a and gf.n_shots == n
    gf.shoot(0.3, 0.75)
    assert gf.n_shots == n + 1


def test_second_derivative_identities():
    J = np.array([[2.0, 0.5], [1.0, 0.75]])
    assert second_derivatives_from_jacobian(J) == (4.0, -2.0, 1.5)


def test_legendre_diagnostic():
    diag = GF.legendre_diagnostic(np.linspace(0, 1, 4, endpoint=False), np.linspace(-0.8, 0.8, 5))
    assert diag["all_negative"] and diag["consistent"]
    assert diag["nodes"].shape == (20, 5)
    assert diag["twist_margin_beta"] > 0


def test_surface_csv_columns():
    csv = GF.surface_csv([0.0], [0.0, 0.5])
    lines = csv.splitlines()
    assert lines[0] == "theta,theta1,h,d1h,d2h,d12h" and len(lines) == 3
