import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relpend import DomainError
from relpend.flow import System, flow_point
from relpend.model import (
    Chart,
    ForcingSpec,
    ModelSpec,
    PotentialSpec,
    chart_from_QP,
    chart_from_uv,
    chart_to_QP,
    chart_to_uv,
    format_model,
    free_model,
    hamiltonian,
    legendre,
    parse_model,
    pendulum,
    rescale_to_unit_period,
)

coef = st.floats(-2.0, 2.0, allow_nan=False)
harmonics = st.lists(st.tuples(st.integers(1, 4), coef, coef), max_size=3)
periods = st.floats(0.3, 7.0)
reals = st.floats(-20.0, 20.0, allow_nan=False)


@st.composite
def models(draw):
    return ModelSpec(
        ForcingSpec(draw(periods), draw(st.floats(-1.0, 1.0)), tuple(draw(harmonics))),
        PotentialSpec(draw(periods), tuple(draw(harmonics))),
    )


@given(models(), reals)
def test_forcing_and_potential_are_periodic(spec, x):
    f0, F0 = spec.forcing(x)
    f1, F1 = spec.forcing(x + spec.T)
    assert f1 == pytest.approx(f0, abs=1e-9)
    # F grows by T fbar per period
    assert F1 - F0 == pytest.approx(spec.T * spec.forcing.mean, abs=1e-9)
    assert np.allclose(spec.potential(x + spec.S), spec.potential(x), atol=1e-9)


@given(models(), reals)
def test_primitives_match_finite_differences(spec, x):
    h = 1e-5
    _, Fp = spec.forcing(x + h)
    _, Fm = spec.forcing(x - h)
    f, _ = spec.forcing(x)
    assert (Fp - Fm) / (2 * h) == pytest.approx(f, abs=1e-6)
    Gp, gp, _ = spec.potential(x + h)
    Gm, gm, _ = spec.potential(x - h)
    _, g, dg = spec.potential(x)
    assert (Gp - Gm) / (2 * h) == pytest.approx(g, abs=1e-6)
    # truncation error scales with the third derivative, up to (2 pi k / S)^2 |g'|
    assert (gp - gm) / (2 * h) == pytest.approx(dg, rel=1e-6, abs=1e-5)


@given(models())
def test_potential_primitive_has_zero_mean(spec):
    xs = np.linspace(0, spec.S, 257)[:-1]
    G, _, _ = spec.potential(xs)
    assert abs(G.mean()) < 1e-12


@given(models())
def test_sup_bounds_dominate_grid(spec):
    g_sup, dg_sup = spec.potential.grid_sup()
    assert g_sup <= spec.potential.sup_bound + 1e-12
    assert dg_sup <= spec.potential.derivative_sup_bound + 1e-12


def test_pendulum_normalization():
    spec = pendulum(a=2.0, S=3.0)
    assert spec.potential.derivative_sup_bound == pytest.approx(2.0)
    assert spec.potential.twist_length_bound() == pytest.approx(math.pi / math.sqrt(2.0))
    assert free_model().potential.twist_length_bound() == math.inf


@given(st.floats(-1e6, 1e6))
def test_legendre_involution(p):
    v = legendre(p, inverse=True)
    assert abs(v) < 1
    # 1 - v loses digits as |p| grows: relative round-off is about p^2 eps
    assert legendre(v) == pytest.approx(p, rel=1e-14 * (1 + p * p), abs=1e-12)


def test_legendre_rejects_superluminal():
    with pytest.raises(DomainError):
        legendre(1.0)
    with pytest.raises(DomainError):
        legendre([0.2, -1.5])


def test_hamiltonian_free_particle():
    assert hamiltonian(free_model(), 0.3, 1.0, 0.75) == pytest.approx(1.25)


@given(models(), reals, reals, reals)
def test_chart_round_trip(spec, t, q, p):
    for chart in Chart:
        Q, P = chart_to_QP(spec, t, q, p, chart)
        q1, p1 = chart_from_QP(spec, t, Q, P, chart)
        assert q1 == q
        assert p1 == pytest.approx(p, abs=1e-12 * max(1.0, abs(p), abs(P)))


@given(st.floats(0.01, 0.5), st.floats(0.5, 3.5), reals)
def test_uv_round_trip(delta, v, u):
    u1, P = chart_from_uv(delta, u, v)
    u2, v2 = chart_to_uv(delta, u1, P)
    assert u2 == u and v2 == pytest.approx(v, rel=1e-14)


def test_uv_band_is_enforced():
    with pytest.raises(DomainError, match=r"2/\(7 delta\)"):
        chart_to_uv(0.1, 0.0, 1.0)  # v = 10
    with pytest.raises(DomainError):
        chart_from_uv(0.1, 0.0, 0.2)
    with pytest.raises(DomainError):
        chart_to_uv(0.0, 0.0, 5.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 4.0), st.floats(-1.0, 1.0), st.floats(-2.0, 2.0))
def test_rescaling_conjugates_the_flow(S, q0, p0):
    spec = pendulum(1.3, 2.0, S, forcing=((1, 0.4, -0.2),), fbar=0.1)
    unit = rescale_to_unit_period(spec)
    assert unit.S == 1.0 and unit.T == pytest.approx(2.0 / S)
    t1 = 1.7
    z, _, _ = flow_point(System.CANONICAL, spec, 0.0, t1, (q0, p0), 1e-12)
    y, _, _ = flow_point(System.CANONICAL, unit, 0.0, t1 / S, (q0 / S, p0), 1e-12)
    assert y[0] * S == pytest.approx(z[0], abs=1e-8)
    assert y[1] == pytest.approx(z[1], abs=1e-8)


def test_model_file_round_trip():
    spec = pendulum(1.0, 2.5, forcing=((1, 0.3, 0.0), (3, 0.0, -0.1)), fbar=0.25)
    assert parse_model(format_model(spec)) == spec


def test_model_file_reports_every_problem():
    text = "S = 1\nT = 1\nT = 2\nbogus = 3\ng.harmonics = (1, 0, x)\nnot a line\n"
    with pytest.raises(ValueError) as exc:
        parse_model(text)
    msg = str(exc.value)
    assert "line 3: duplicate key 'T' (first set on line 2)" in msg
    assert "line 4: unknown key 'bogus'" in msg
    assert "line 5: bad value" in msg
    assert "line 6: expected key=value" in msg


def test_model_file_comments_and_defaults():
    spec = parse_model("# pendulum\nS = 2  # period\nT = 1\n")
    assert spec.forcing.mean == 0 and spec.potential.is_zero


def test_model_file_requires_periods():
    with pytest.raises(ValueError, match="missing required key 'S'"):
        parse_model("T = 1\n")


def test_invalid_harmonics_rejected():
    with pytest.raises(ValueError):
        ForcingSpec(1.0, 0.0, ((0, 1.0, 0.0),))
    with pytest.raises(ValueError):
        parse_model("S = 1\nT = 1\nf.harmonics = (1.5, 1, 0)\n")
