import math

import numpy as np
import pytest

from relpend import DomainError
from relpend.experiments import (
    boundedness_sweep,
    confinement_check,
    default_factor_count,
    escape_demo,
    gamma_by_quadrature,
    iterate_map,
    lyapunov,
    quasiperiodic_demo,
    subharmonic_demo,
)
from relpend.flow import System, flow_point
from relpend.model import free_model, pendulum

ZERO_MEAN = pendulum(1.0, 1.0, forcing=((1, 1.0, 0.0),))
DRIFT = pendulum(1.0, 1.0, forcing=((1, 1.0, 0.0),), fbar=0.5)


def test_iterates_match_repeated_flow():
    _, done, qs, ps = iterate_map(ZERO_MEAN, [0.0, 0.2], [1.0, -3.0], 5, tol=1e-12)
    assert list(done) == [5, 5]
    z = np.array([0.2, -3.0])
    for _ in range(5):
        z = flow_point(System.CANONICAL, ZERO_MEAN, 0.0, 1.0, z, 1e-12)[0]
    assert np.allclose([qs[1, -1], ps[1, -1]], z, atol=1e-10)


def test_small_sweep_report():
    rep = boundedness_sweep(ZERO_MEAN, np.linspace(-4, 4, 5), n_periods=300)
    assert rep.passed and rep.unbounded_count == 0
    d = rep.as_dict()
    assert d["verdict"] == "PASS" and "empirical" in d["note"]
    lines = rep.to_csv().splitlines()
    assert lines[0] == "p0,max_abs_p,excursion,iterations" and len(lines) == 6
    assert np.all(rep.completed == 300)


def test_sweep_flags_large_excursions():
    # a tiny budget makes every orbit count as unbounded; the report must say FAIL
    rep = boundedness_sweep(ZERO_MEAN, [0.0, 0.5], n_periods=50, bound=1e-9)
    assert rep.unbounded_count == 2 and not rep.passed


def test_sweep_requires_zero_mean():
    with pytest.raises(DomainError, match="zero-mean"):
        boundedness_sweep(DRIFT, [0.0], n_periods=10)


def test_escape_requires_mean():
    with pytest.raises(DomainError, match="nonzero mean"):
        escape_demo(ZERO_MEAN)


def test_escape_report():
    rep = escape_demo(DRIFT, (0.0, 10.0, 50.0), 200)
    assert rep.threshold is not None and rep.threshold <= 50.0
    assert rep.half_step == 0.25
    assert rep.min_increment(2) > 0.25
    assert rep.slopes[2] == pytest.approx(0.5, rel=0.05)
    d = rep.as_dict()
    assert d["orbits"][2]["slope_target"] == 0.5
    assert rep.to_csv().startswith("p0,n,p_n,increment\n")


def test_escape_with_negative_mean_goes_down():
    spec = pendulum(1.0, 1.0, fbar=-0.5)
    rep = escape_demo(spec, (-50.0,), 100)
    assert rep.min_increment(0) > 0.25
    assert rep.slopes[0] == pytest.approx(-0.5, rel=0.05)


def test_free_escape_is_exact():
    spec = free_model(1.0, fbar=0.5)
    rep = escape_demo(spec, (0.0, 50.0), 100)
    for j in range(2):
        assert np.allclose(rep.increments[j], 0.5, atol=1e-12)


@pytest.mark.parametrize("p0", [5.0, 50.0, 500.0])
def test_gamma_quadrature_matches_direct(p0):
    g = gamma_by_quadrature(DRIFT, 0.1, p0)
    assert g["gamma_quadrature"] == pytest.approx(g["gamma_direct"], abs=1e-8)
    assert g["eps_q"] == pytest.approx(g["eps_q_direct"], abs=1e-8)


def test_lyapunov_function():
    G = float(DRIFT.potential(0.3)[0])
    assert lyapunov(DRIFT, 0.3, 2.0) == pytest.approx(2.0 - G)


def test_default_factor_count():
    assert default_factor_count(pendulum(1.0, 1.0)) == 1
    assert default_factor_count(pendulum(1.0, 10.0)) == 4
    assert default_factor_count(pendulum(1.0, math.pi)) == 2
    assert default_factor_count(free_model(7.0)) == 1


def test_subharmonic_certificate():
    spec = pendulum(1.0, 1.0, forcing=((1, 0.1, 0.0),))
    cert = subharmonic_demo(spec, 1, 2, N=2)
    assert cert.passed
    assert cert.translation_error < 1e-5 and cert.flow_orbit_mismatch < 1e-5
    assert cert.rotation == pytest.approx(0.5, abs=1e-8)
    assert cert.as_dict()["verdict"] == "PASS"


def test_subharmonic_validation():
    with pytest.raises(DomainError, match="coprime"):
        subharmonic_demo(ZERO_MEAN, 2, 4)
    with pytest.raises(DomainError, match="not admissible"):
        subharmonic_demo(ZERO_MEAN, 3, 1)


def test_quasiperiodic_convergents():
    spec = pendulum(1.0, 1.0, forcing=((1, 0.1, 0.0),))
    rep = quasiperiodic_demo(spec, (math.sqrt(5) - 1) / 2, cap=5, N=2)
    done = [r for r in rep["convergents"] if "slope" in r]
    assert [(r["a"], r["b"]) for r in done] == [(0, 1), (1, 2), (2, 3), (3, 5)]
    assert rep["monotone"] and rep["within_gap"] and not rep["partial"]
    assert any("skipped" in r for r in rep["convergents"])  # (1, 1) is outside |omega| < T/S


def test_quasiperiodic_rejects_rationals():
    from fractions import Fraction

    for omega in (Fraction(1, 3), 0.5, 2):
        with pytest.raises(DomainError, match="rational"):
            quasiperiodic_demo(ZERO_MEAN, omega, cap=10)


def test_confinement_check():
    out = confinement_check([5.0, 3.0, 0.5, 4.0], 1.0)
    assert out["first_visit"] == 2 and out["outside_count"] == 3 and out["verdict"] == "PASS"
    assert confinement_check([5.0], 1.0)["verdict"] == "FAIL"
