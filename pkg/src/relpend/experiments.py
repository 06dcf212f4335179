"""End-to-end experiments: bounded momentum for zero-mean forcing, escape for
nonzero mean forcing, and subharmonic / quasi-periodic solutions built from
minimal orbits."""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.integrate import simpson

from . import _kernels as K
from .errors import DomainError, IntegrationError
from .flow import System, integrate
from .mather import (
    MatherOrbit,
    MinimizeOptions,
    check_rotation,
    continued_fraction_convergents,
    generating_functions,
    minimize,
    orbit_rotation_number,
    reconstruct_orbit,
)
from .model import Chart, ModelSpec, chart_from_QP

EMPIRICAL_NOTE = "empirical evidence from finitely many orbits and iterates, not a proof"


@dataclass
class SweepReport:
    q0: float
    p0: np.ndarray
    n_periods: int
    excursion: np.ndarray
    max_abs_p: np.ndarray
    completed: np.ndarray
    failures: dict
    bound: float
    wall_time: float
    note: str = EMPIRICAL_NOTE

    @property
    def unbounded_count(self) -> int:
        return int(np.count_nonzero(~(self.excursion < self.bound)))

    @property
    def passed(self) -> bool:
        return self.unbounded_count == 0 and not self.failures

    def as_dict(self) -> dict:
        return {
            "q0": self.q0,
            "n_orbits": int(self.p0.size),
            "p0_range": [float(self.p0.min()), float(self.p0.max())],
            "n_periods": self.n_periods,
            "bound": self.bound,
            "max_excursion": float(np.max(self.excursion)),
            "excursions_above_bound": self.unbounded_count,
            "failures": {str(k): v for k, v in self.failures.items()},
            "wall_time_s": self.wall_time,
            "verdict": "PASS" if self.passed else "FAIL",
            "note": self.note,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("p0,max_abs_p,excursion,iterations\n")
        for p0, m, e, c in zip(self.p0, self.max_abs_p, self.excursion, self.completed):
            buf.write(f"{float(p0)!r},{float(m)!r},{float(e)!r},{int(c)}\n")
        return buf.getvalue()


def iterate_map(spec: ModelSpec, q0, p0, n_iter: int, tol: float = 1e-10):
    """Iterates of the period map from each (q0[j], p0[j]); arrays of shape (m, n_iter + 1)."""
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    q0, p0 = np.broadcast_arrays(q0, p0)
    status, done, qs, ps = K.iterate_many(spec.params, np.ascontiguousarray(q0), np.ascontiguousarray(p0),
                                          int(n_iter), float(tol))
    return status, done, qs, ps


def boundedness_sweep(spec: ModelSpec, p0_grid=None, n_periods: int = 10_000, q0: float = 0.0,
                      bound: float = 5.0, tol: float = 1e-10) -> SweepReport:
    """Iterate the period map from (q0, p0) for every p0 on the grid and record
    the momentum excursion sup_n |p_n| - |p_0|."""
    if not spec.forcing.zero_mean:
        raise DomainError("boundedness sweep requires zero-mean forcing (fbar = 0)")
    p0 = np.linspace(-20.0, 20.0, 41) if p0_grid is None else np.asarray(p0_grid, dtype=float)
    t = time.perf_counter()
    status, done, qs, ps = iterate_map(spec, q0, p0, n_periods, tol)
    wall = time.perf_counter() - t
    failures = {}
    max_abs = np.empty(p0.size)
    for j in range(p0.size):
        valid = ps[j, : done[j] + 1]
        max_abs[j] = np.max(np.abs(valid))
        if status[j] != K.OK:
            failures[float(p0[j])] = f"integration failed after {int(done[j])} periods (status {int(status[j])})"
    exc = max_abs - np.abs(p0)
    return SweepReport(q0, p0, n_periods, exc, max_abs, done, failures, bound, wall)


# ---------------------------------------------------------------------------
# escape


def lyapunov(spec: ModelSpec, q, p):
    """V(q, p) = p - G(q)."""
    G, _, _ = spec.potential(q)
    return np.asarray(p, dtype=float) - G


def _velocity_defect(p):
    """p / sqrt(1 + p^2) - 1 without cancellation for large positive p."""
    p = np.asarray(p, dtype=float)
    s = np.sqrt(1.0 + p * p)
    return np.where(p > 0, -1.0 / (s * (s + np.abs(p))), p / s - 1.0)


def gamma_by_quadrature(spec: ModelSpec, q0: float, p0: float, n: int = 2001, tol: float = 1e-12) -> dict:
    """Increment of V over one period, assembled from the two defect integrals

        eps_q = int_0^T (q'(s) - 1) ds,   eps_p = int_0^T [g(q(s)) - g(q0 + s)] ds,

    so that Gamma = -G(q0 + T + eps_q) + G(q0 + T) + eps_p + T fbar.
    """
    T = spec.T
    ts = np.linspace(0.0, T, n)
    res = integrate(System.CANONICAL, spec, 0.0, T, (q0, p0), tol, t_eval=ts)
    q, p = res.samples[:, 0], res.samples[:, 1]
    eps_q = float(simpson(_velocity_defect(p), x=ts))
    _, g_path, _ = spec.potential(q)
    _, g_free, _ = spec.potential(q0 + ts)
    eps_p = float(simpson(g_path - g_free, x=ts))
    G = lambda x: float(spec.potential(x)[0])
    gamma = -G(q0 + T + eps_q) + G(q0 + T) + eps_p + T * spec.forcing.mean
    direct = float(lyapunov(spec, res.state[0], res.state[1]) - lyapunov(spec, q0, p0))
    return {"gamma_quadrature": gamma, "gamma_direct": direct, "eps_q": eps_q, "eps_p": eps_p,
            "eps_q_direct": float(res.state[0] - q0 - T)}


@dataclass
class EscapeReport:
    fbar: float
    T: float
    p0: np.ndarray
    n_iter: int
    increments: list
    momenta: list
    slopes: np.ndarray
    threshold: float | None
    below_threshold: list
    gamma_check: dict
    note: str = (
        "V(q, p) = p - G(q); this is the form for which V(Pi(z)) = V(z) + Gamma(z) holds "
        "with the stated Gamma, and the identity is checked by quadrature"
    )

    @property
    def half_step(self) -> float:
        return self.T * self.fbar / 2

    def min_increment(self, j) -> float:
        return float(np.min(np.sign(self.fbar) * self.increments[j]))

    def as_dict(self) -> dict:
        return {
            "fbar": self.fbar,
            "T": self.T,
            "n_iter": self.n_iter,
            "half_step": self.half_step,
            "threshold_p0": self.threshold,
            "orbits": [
                {
                    "p0": float(p0),
                    "min_signed_increment": self.min_increment(j),
                    "slope": float(self.slopes[j]),
                    "slope_target": self.T * self.fbar,
                    "final_p": float(self.momenta[j][-1]),
                }
                for j, p0 in enumerate(self.p0)
            ],
            "below_threshold": self.below_threshold,
            "gamma_check": self.gamma_check,
            "note": self.note,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("p0,n,p_n,increment\n")
        for j, p0 in enumerate(self.p0):
            for n, (p, inc) in enumerate(zip(self.momenta[j][:-1], self.increments[j])):
                buf.write(f"{float(p0)!r},{n},{float(p)!r},{float(inc)!r}\n")
        return buf.getvalue()


def escape_demo(spec: ModelSpec, p0=(50.0,), n_iter: int = 1000, q0: float = 0.0, tol: float = 1e-10) -> EscapeReport:
    """Iterate the period map and track V(q, p) = p - G(q) along each orbit."""
    fbar = spec.forcing.mean
    if fbar == 0:
        raise DomainError("escape demo requires nonzero mean forcing (fbar != 0)")
    p0 = np.sort(np.atleast_1d(np.asarray(p0, dtype=float)))
    status, done, qs, ps = iterate_map(spec, q0, p0, n_iter, tol)
    if np.any(status != K.OK):
        bad = [float(p) for p, s in zip(p0, status) if s != K.OK]
        raise IntegrationError(f"period map iteration failed for p0 in {bad}", 0.0)
    sgn = math.copysign(1.0, fbar)
    half = abs(spec.T * fbar) / 2
    incs, moms, slopes, good = [], [], [], []
    n = np.arange(n_iter + 1)
    for j in range(p0.size):
        V = lyapunov(spec, qs[j], ps[j])
        inc = np.diff(V)
        incs.append(inc)
        moms.append(ps[j])
        slopes.append(np.polyfit(n, ps[j], 1)[0])
        good.append(bool(np.all(sgn * inc > half)))
    # least tested p0 from which every larger tested p0 also has uniformly large increments
    threshold = None
    for j in range(p0.size - 1, -1, -1):
        if not good[j]:
            break
        threshold = float(p0[j])
    below = [float(p) for p, g in zip(p0, good) if not g]
    check = gamma_by_quadrature(spec, q0, float(p0[-1]))
    return EscapeReport(fbar, spec.T, p0, n_iter, incs, moms, np.array(slopes), threshold, below, check)


# ---------------------------------------------------------------------------
# subharmonic and quasi-periodic solutions


def default_factor_count(spec: ModelSpec) -> int:
    """Smallest N with T / N strictly below the twist bound."""
    bound = spec.potential.twist_length_bound()
    if math.isinf(bound):
        return 1
    return int(math.floor(spec.T / bound)) + 1


@dataclass
class SubharmonicCertificate:
    a: int
    b: int
    orbit: MatherOrbit
    start: tuple
    translation_error: float
    flow_orbit_mismatch: float
    reconstruction: dict
    rotation: float
    times: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    tol: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.translation_error < self.tol and self.flow_orbit_mismatch < self.tol

    def as_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "start_qp": list(self.start),
            "translation_error": self.translation_error,
            "flow_orbit_mismatch": self.flow_orbit_mismatch,
            "reconstruction": self.reconstruction,
            "rotation_number": self.rotation,
            "orbit": self.orbit.summary(),
            "verdict": "PASS" if self.passed else "FAIL",
        }


def subharmonic_demo(spec: ModelSpec, a: int, b: int, N: int | None = None,
                     opts: MinimizeOptions | None = None, tol: float = 1e-12) -> SubharmonicCertificate:
    """Build the (a, b) minimal orbit and check X(t + bT) = X(t) + (a S, 0) along the flow."""
    if math.gcd(a, b) != 1:
        raise DomainError(f"a and b must be coprime, got ({a}, {b})")
    check_rotation(spec, a, b)
    N = default_factor_count(spec) if N is None else N
    gfs = generating_functions(spec, N, tol)
    orbit = minimize(gfs, a, b, opts=opts)
    recon = reconstruct_orbit(gfs, orbit)
    L = spec.T / N
    M = b * N
    times = np.arange(M + 1) * L
    times[-1] = b * spec.T
    Q0, P0 = orbit.sites[0], orbit.momenta[0]
    res = integrate(System.SHIFTED, spec, 0.0, b * spec.T, (Q0, P0), tol, t_eval=times)
    sites = np.array([orbit.site(i) for i in range(M + 1)])
    moms = np.array([orbit.momentum(i) for i in range(M + 1)])
    mismatch = float(np.max(np.abs(res.samples - np.column_stack([sites, moms]))))
    # translation identity in the original (q, p) variables
    q_start, p_start = chart_from_QP(spec, 0.0, Q0, P0, Chart.FORCING)
    q_end, p_end = chart_from_QP(spec, b * spec.T, res.state[0], res.state[1], Chart.FORCING)
    err = float(max(abs(q_end - q_start - a * spec.S), abs(p_end - p_start)))
    rot = orbit_rotation_number(gfs, orbit)
    return SubharmonicCertificate(a, b, orbit, (float(q_start), float(p_start)), err, mismatch,
                                  recon.as_dict(), rot.omega, res.times, res.samples)


CONVERGENT_NOTE = (
    "evidence from continued-fraction convergents a_k/b_k; the limiting irrational construction "
    "is not performed"
)


def _is_rational_input(omega, cap):
    if isinstance(omega, (Fraction, int)):
        return True
    fr = Fraction(omega)
    return fr.denominator <= cap


def quasiperiodic_demo(spec: ModelSpec, omega, cap: int = 200, N: int | None = None,
                       opts: MinimizeOptions | None = None, tol: float = 1e-12) -> dict:
    """Minimal orbits for the convergents of an irrational rotation number."""
    if _is_rational_input(omega, cap):
        raise DomainError(f"rotation number {omega!r} is rational; use the subharmonic command instead")
    omega = float(omega)
    if not abs(omega * spec.S) < spec.T:
        raise DomainError(f"rotation number must satisfy |omega S| < T = {spec.T!r}")
    N = default_factor_count(spec) if N is None else N
    gfs = generating_functions(spec, N, tol)
    rows = []
    for a, b in continued_fraction_convergents(omega, cap):
        if not abs(a * spec.S / b) < spec.T:
            rows.append({"a": a, "b": b, "skipped": "outside admissible range"})
            continue
        try:
            orbit = minimize(gfs, a, b, opts=opts)
        except Exception as exc:  # recorded, the report stays partial
            rows.append({"a": a, "b": b, "error": str(exc)})
            continue
        res = integrate(System.SHIFTED, spec, 0.0, b * spec.T, (orbit.sites[0], orbit.momenta[0]), tol)
        slope = (res.state[0] - orbit.sites[0]) / (b * spec.T)
        rows.append({
            "a": a,
            "b": b,
            "action": orbit.action,
            "residual": orbit.residual,
            "slope": float(slope),
            "slope_error": float(abs(slope - omega * spec.S / spec.T)),
            "gap_bound": 10.0 / b**2,
        })
    ok = [r for r in rows if "slope" in r]
    errs = [r["slope_error"] for r in ok]
    return {
        "omega": omega,
        "target_slope": omega * spec.S / spec.T,
        "cap": cap,
        "N": N,
        "convergents": rows,
        "monotone": bool(all(e2 <= e1 for e1, e2 in zip(errs, errs[1:]))),
        "within_gap": bool(all(r["slope_error"] <= r["gap_bound"] for r in ok)),
        "partial": any("error" in r for r in rows),
        "note": CONVERGENT_NOTE,
    }


def confinement_check(orbit_momenta, r_star: float) -> dict:
    """First index at which the orbit visits T x (-r_star, r_star)."""
    r = np.asarray(orbit_momenta, dtype=float)
    inside = np.nonzero(np.abs(r) < r_star)[0]
    first = int(inside[0]) if inside.size else None
    return {
        "r_star": r_star,
        "first_visit": first,
        "max_abs_r": float(np.max(np.abs(r))),
        "outside_count": int(np.count_nonzero(np.abs(r) >= r_star)),
        "verdict": "PASS" if first is not None else "FAIL",
    }
