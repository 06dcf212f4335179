import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relpend import DomainError, IntegrationError
from relpend.flow import (
    System,
    SystemId,
    admissible_delta,
    delta_derivatives_at_zero,
    expansion_remainder,
    flow_point,
    free_scaled_flow,
    integrate,
)
from relpend.model import Chart, chart_from_QP, chart_to_QP, free_model, hamiltonian, pendulum

FORCED = pendulum(1.0, 1.0, forcing=((1, 0.7, 0.2), (2, 0.0, 0.3)))
DRIFT = pendulum(0.8, 1.3, S=1.5, forcing=((1, 0.5, 0.0),), fbar=0.2)


@given(st.floats(-3, 3), st.floats(-50, 50), st.floats(0.1, 5))
@settings(max_examples=30, deadline=None)
def test_free_particle_closed_form(q0, p0, t):
    z, _, a = flow_point(System.CANONICAL, free_model(), 0.0, t, (q0, p0), 1e-12, action=True)
    v = p0 / math.sqrt(1 + p0 * p0)
    assert z[0] == pytest.approx(q0 + v * t, abs=1e-10 * max(1, t))
    assert z[1] == p0
    assert a == pytest.approx(-t / math.sqrt(1 + p0 * p0), abs=1e-10)


def test_constant_force_closed_form():
    # p = p0 + c t, q = q0 + (sqrt(1 + p^2) - sqrt(1 + p0^2)) / c
    c, p0, t = 0.5, -2.0, 3.0
    z, _, _ = flow_point(System.CANONICAL, free_model(fbar=c), 0.0, t, (0.0, p0), 1e-12)
    p1 = p0 + c * t
    assert z[1] == pytest.approx(p1, abs=1e-12)
    assert z[0] == pytest.approx((math.hypot(1, p1) - math.hypot(1, p0)) / c, abs=1e-10)


def test_energy_conserved_without_forcing():
    spec = pendulum(1.0, 1.0)
    res = integrate(System.CANONICAL, spec, 0.0, 50.0, (0.1, 0.4), 1e-12, t_eval=np.linspace(0, 50, 200))
    H = hamiltonian(spec, 0.0, res.samples[:, 0], res.samples[:, 1])
    assert np.ptp(H) < 1e-9


@pytest.mark.parametrize("system", [System.CANONICAL, System.SHIFTED])
def test_jacobian_is_symplectic_and_matches_differences(system):
    z0 = np.array([0.3, 1.2])
    z, J, _ = flow_point(system, FORCED, 0.2, 2.7, z0, 1e-13, jacobian=True)
    assert np.linalg.det(J) == pytest.approx(1.0, abs=1e-10)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        zp = flow_point(system, FORCED, 0.2, 2.7, z0 + e, 1e-13)[0]
        zm = flow_point(system, FORCED, 0.2, 2.7, z0 - e, 1e-13)[0]
        assert np.allclose((zp - zm) / (2 * h), J[:, k], atol=1e-6)


def test_scaled_jacobian_matches_differences():
    z0 = np.array([0.4, 2.0])
    z, J, _ = flow_point(System.SCALED, FORCED, 0.0, 1.0, z0, 1e-13, delta=0.2, jacobian=True)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        zp = flow_point(System.SCALED, FORCED, 0.0, 1.0, z0 + e, 1e-13, delta=0.2)[0]
        zm = flow_point(System.SCALED, FORCED, 0.0, 1.0, z0 - e, 1e-13, delta=0.2)[0]
        assert np.allclose((zp - zm) / (2 * h), J[:, k], atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-4, 4))
def test_shifted_system_is_the_canonical_flow_in_another_chart(q0, p0):
    t0, t1 = 0.3, 2.1
    z = flow_point(System.CANONICAL, DRIFT, t0, t1, (q0, p0), 1e-12)[0]
    Q0, P0 = chart_to_QP(DRIFT, t0, q0, p0, Chart.FORCING)
    W = flow_point(System.SHIFTED, DRIFT, t0, t1, (Q0, P0), 1e-12)[0]
    back = chart_from_QP(DRIFT, t1, W[0], W[1], Chart.FORCING)
    assert np.allclose(back, z, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1), st.floats(1, 3), st.sampled_from([0.05, 0.1, 0.2]))
def test_scaled_system_is_the_canonical_flow_in_another_chart(u0, v0, delta):
    spec = FORCED
    P0 = 1.0 / (delta * v0)
    _, p0 = chart_from_QP(spec, 0.0, u0, P0, Chart.POTENTIAL_FORCING)
    z = flow_point(System.CANONICAL, spec, 0.0, 1.0, (u0, float(p0)), 1e-13)[0]
    w = flow_point(System.SCALED, spec, 0.0, 1.0, (u0, v0), 1e-13, delta=delta)[0]
    Q, P = chart_to_QP(spec, 1.0, z[0], z[1], Chart.POTENTIAL_FORCING)
    assert w[0] == pytest.approx(float(Q), abs=1e-9)
    assert w[1] == pytest.approx(1.0 / (delta * float(P)), rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1), st.floats(0.5, 3.5), st.floats(0.0, 0.5))
def test_free_scaled_closed_form(u0, v0, delta):
    z = flow_point(System.SCALED, free_model(), 0.0, 1.0, (u0, v0), 1e-13, delta=delta)[0]
    u1, v1 = free_scaled_flow(u0, v0, 1.0, delta)
    assert z[0] == pytest.approx(float(u1), abs=1e-12)
    assert z[1] == pytest.approx(float(v1), abs=1e-12)


def test_delta_zero_is_translation():
    z0, X, Y = delta_derivatives_at_zero(0.25, 2.0, 1.5)
    z = flow_point(System.SCALED, FORCED, 0.0, 1.5, (0.25, 2.0), 1e-12, delta=0.0)[0]
    assert np.array_equal(z, z0) or np.allclose(z, z0, atol=1e-14)
    assert np.array_equal(X, [0, 0]) and np.array_equal(Y, [-6.0, 0.0])


@pytest.mark.parametrize("system", [System.CANONICAL, System.SHIFTED])
def test_lift_equivariance(system):
    z0 = np.array([0.37, 0.9])
    a = flow_point(system, DRIFT, 0.0, 1.3, z0, 1e-12)[0]
    b = flow_point(system, DRIFT, 0.0, 1.3, z0 + [DRIFT.S, 0.0], 1e-12)[0]
    assert np.allclose(b - a, [DRIFT.S, 0.0], atol=1e-10)


def test_time_periodicity_of_the_shifted_field():
    # the shifted system has no explicit fbar*t growth once F is periodic
    spec = pendulum(1.0, 1.0, forcing=((1, 0.5, 0.0),))
    a = flow_point(System.SHIFTED, spec, 0.0, 0.5, (0.2, 0.3), 1e-12)[0]
    b = flow_point(System.SHIFTED, spec, 1.0, 1.5, (0.2, 0.3), 1e-12)[0]
    assert np.allclose(a, b, atol=1e-12)


def test_error_shrinks_with_tolerance():
    ref = flow_point(System.CANONICAL, FORCED, 0.0, 5.0, (0.1, 0.5), 1e-14)[0]
    errs = [np.max(np.abs(flow_point(System.CANONICAL, FORCED, 0.0, 5.0, (0.1, 0.5), tol)[0] - ref))
            for tol in (1e-6, 1e-8, 1e-10)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-8


def test_backward_integration_inverts_forward():
    z = flow_point(System.CANONICAL, FORCED, 0.0, 2.0, (0.1, 0.5), 1e-13)[0]
    back = flow_point(System.CANONICAL, FORCED, 2.0, 0.0, z, 1e-13)[0]
    assert np.allclose(back, [0.1, 0.5], atol=1e-10)


def test_dense_output_matches_direct_integration():
    ts = np.linspace(0.0, 3.0, 7)
    res = integrate(System.CANONICAL, FORCED, 0.0, 3.0, (0.1, 0.5), 1e-12, t_eval=ts, jacobian=True)
    for t, s in zip(ts[1:], res.samples[1:]):
        direct = flow_point(System.CANONICAL, FORCED, 0.0, t, (0.1, 0.5), 1e-12)[0]
        assert np.allclose(s, direct, atol=1e-9)
    assert res.sample_jacobians.shape == (7, 2, 2)
    lines = res.to_csv().splitlines()
    assert lines[0] == "t,q,p,J11,J12,J21,J22" and len(lines) == 8


def test_recorded_steps_are_monotone():
    res = integrate(System.SHIFTED, FORCED, 0.0, 2.0, (0.0, 1.0), 1e-10, record=True)
    assert np.all(np.diff(res.times) > 0)
    assert res.times[-1] == 2.0
    assert res.steps > 0


def test_tolerance_range_enforced():
    for tol in (1e-15, 1e-2):
        with pytest.raises(DomainError, match="tol must lie"):
            flow_point(System.CANONICAL, FORCED, 0.0, 1.0, (0.0, 0.0), tol)


def test_t_eval_validation():
    with pytest.raises(DomainError):
        integrate(System.CANONICAL, FORCED, 0.0, 1.0, (0, 0), t_eval=[0.5, 2.0])
    with pytest.raises(DomainError):
        integrate(System.CANONICAL, FORCED, 0.0, 1.0, (0, 0), t_eval=[0.5, 0.2])


def test_negative_delta_rejected():
    with pytest.raises(DomainError):
        SystemId(System.SCALED, -0.1)


def test_blow_up_is_reported():
    # v' ~ v^3 near the band edge drives the scaled system to a singularity
    spec = pendulum(30.0, 1.0)
    with pytest.raises(IntegrationError) as exc:
        flow_point(System.SCALED, spec, 0.0, 20.0, (0.1, 40.0), 1e-10, delta=0.5)
    assert 0.0 < exc.value.last_time < 20.0


def test_remainder_shrinks_like_delta_squared():
    spec = pendulum(1.0, 1.0, forcing=((1, 1.0, 0.0),))
    a = expansion_remainder(spec, 0.1)
    b = expansion_remainder(spec, 0.05)
    assert a.R1.shape == (32, 32)
    assert 0.15 < b.sup_norm / a.sup_norm < 0.4
    assert b.c2_norm >= b.c1_norm >= b.sup_norm


def test_remainder_grid_and_delta_validation():
    spec = pendulum()
    with pytest.raises(DomainError, match="at least 32x32"):
        expansion_remainder(spec, 0.1, n_u=16)
    with pytest.raises(DomainError):
        expansion_remainder(spec, 0.0)
    with pytest.raises(DomainError):
        expansion_remainder(spec, 0.6)


def test_free_remainder_closed_form():
    # g = f = 0: R1 = (2/delta^2) T (1/sqrt(1 + delta^2 v^2) - 1) + T v^2, R2 = 0
    rep = expansion_remainder(free_model(), 0.1)
    V = rep.v_grid[None, :]
    R1 = 2 / 0.01 * (1 / np.sqrt(1 + 0.01 * V**2) - 1) + V**2
    assert np.allclose(rep.R1, np.broadcast_to(R1, rep.R1.shape), atol=1e-8)
    assert np.max(np.abs(rep.R2)) == 0.0


def test_admissible_delta_in_range():
    d = admissible_delta(pendulum())
    assert 0 < d <= 0.5
