"""Periodic minimal configurations over the factor decomposition, orbit checks,
rotation numbers and hull functions.

A configuration with winding a and period b over N factors has sites
theta_0 .. theta_{bN-1} and the closure theta_{i+bN} = theta_i + a S. Segment
i joins theta_i to theta_{i+1} and is weighted by the generating function of
factor i mod N. Every N-th site is a point of the period-map orbit.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize as _sp_minimize

from .errors import ConvergenceError, DomainError
from .genfun import GeneratingFunction, ShotResult, second_derivatives_from_jacobian
from .model import ModelSpec
from .poincare import CylinderMap, factor_chain

log = logging.getLogger(__name__)

EQUAL_TOL = 1e-9
TIE_TOL = 1e-12


def generating_functions(spec: ModelSpec, N: int, tol: float = 1e-12, shoot_tol: float = 1e-12):
    return [GeneratingFunction(f, shoot_tol=shoot_tol) for f in factor_chain(spec, N, tol)]


def _period(gfs) -> float:
    return gfs[0].factor.spec.S


def check_rotation(spec: ModelSpec, a: int, b: int):
    if b < 1 or int(b) != b or int(a) != a:
        raise DomainError(f"winding must be integers with b >= 1, got ({a!r}, {b!r})")
    if not abs(a * spec.S / b) < spec.T:
        raise DomainError(
            f"rotation number a/b = {a}/{b} is not admissible: |a S / b| must be < T = {spec.T!r}"
        )


@dataclass
class PeriodicConfiguration:
    a: int
    b: int
    N: int
    sites: np.ndarray
    S: float = 1.0

    def __post_init__(self):
        self.sites = np.asarray(self.sites, dtype=float)
        if self.sites.shape != (self.b * self.N,):
            raise DomainError(f"expected {self.b * self.N} sites, got {self.sites.shape}")

    @property
    def size(self) -> int:
        return self.b * self.N

    def site(self, i: int) -> float:
        """theta_i for any integer i, using the closure convention."""
        M = self.size
        q, r = divmod(i, M)
        return float(self.sites[r] + q * self.a * self.S)


def _segments(gfs, a, b, sites, S):
    """Shoot every segment; raises DomainError naming the offending segment."""
    N = len(gfs)
    M = b * N
    shots = []
    for i in range(M):
        th = sites[i]
        th1 = sites[i + 1] if i + 1 < M else sites[0] + a * S
        gf = gfs[i % N]
        if not gf.in_band(th, th1):
            raise DomainError(
                f"segment {i} (factor {i % N}): increment {th1 - th!r} outside band {gf.band!r}"
            )
        shots.append(gf.shoot(th, th1))
    return shots


def action(gfs, config: PeriodicConfiguration) -> float:
    """Sum of h_{i mod N}(theta_i, theta_{i+1}) over one period of the configuration."""
    if config.N != len(gfs):
        raise DomainError(f"configuration has N={config.N} but {len(gfs)} factors were given")
    shots = _segments(gfs, config.a, config.b, config.sites, config.S)
    return float(sum(s.h for s in shots))


def _gradient(shots):
    M = len(shots)
    return np.array([shots[i - 1].P1 - shots[i].P0 for i in range(M)])


def _hessian(shots):
    M = len(shots)
    H = np.zeros((M, M))
    for i, s in enumerate(shots):
        h11, h12, h22 = second_derivatives_from_jacobian(s.jacobian)
        j = (i + 1) % M
        H[i, i] += h11
        H[j, j] += h22
        H[i, j] += h12
        H[j, i] += h12
    return H


@dataclass
class MinimizeOptions:
    tol: float = 1e-9
    max_sweeps: int = 200
    gs_sweeps: int = 30
    n_starts: int = 4
    polish: bool = True
    seed: int | None = None
    site_max_iter: int = 60


@dataclass
class MatherOrbit:
    a: int
    b: int
    N: int
    S: float
    sites: np.ndarray
    momenta: np.ndarray
    momenta_left: np.ndarray
    action: float
    residual: float
    clamps: int = 0
    sweeps: int = 0
    starts: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    @property
    def rotation(self) -> Fraction:
        return Fraction(self.a, self.b)

    @property
    def config(self) -> PeriodicConfiguration:
        return PeriodicConfiguration(self.a, self.b, self.N, self.sites, self.S)

    def site(self, i: int) -> float:
        return self.config.site(i)

    def momentum(self, i: int) -> float:
        return float(self.momenta[i % len(self.momenta)])

    def map_points(self):
        """Sites and momenta at multiples of the forcing period (period-map orbit)."""
        return self.sites[:: self.N].copy(), self.momenta[:: self.N].copy()

    def summary(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "N": self.N,
            "action": self.action,
            "residual": self.residual,
            "clamps": self.clamps,
            "sweeps": self.sweeps,
            "starts": self.starts,
            "flags": self.flags,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("i,factor,theta,r\n")
        for i, (th, r) in enumerate(zip(self.sites, self.momenta)):
            buf.write(f"{i},{i % self.N},{float(th)!r},{float(r)!r}\n")
        return buf.getvalue()


class _ActionProblem:
    """Action, gradient and Hessian with a one-point memo of the shots."""

    def __init__(self, gfs, a, b, S):
        self.gfs, self.a, self.b, self.S = gfs, a, b, S
        self._x = None
        self._shots = None

    def shots(self, x):
        if self._x is None or not np.array_equal(x, self._x):
            self._shots = _segments(self.gfs, self.a, self.b, x, self.S)
            self._x = np.array(x, copy=True)
        return self._shots

    def fun(self, x):
        try:
            return float(sum(s.h for s in self.shots(x)))
        except DomainError:
            return 1e300

    def jac(self, x):
        return _gradient(self.shots(x))

    def hess(self, x):
        return _hessian(self.shots(x))


def _site_bracket(gfs, sites, i, a, S):
    N = len(gfs)
    M = len(sites)
    left = sites[i - 1] if i > 0 else sites[M - 1] - a * S
    right = sites[i + 1] if i + 1 < M else sites[0] + a * S
    lo_l, hi_l = gfs[(i - 1) % N].band
    lo_r, hi_r = gfs[i % N].band
    return left, right, max(left + lo_l, right - hi_r), min(left + hi_l, right - lo_r)


def _site_solve(gfs, sites, i, a, S, tol, max_iter):
    """Safeguarded Newton for the stationarity equation of site i; returns (x, clamped)."""
    N = len(gfs)
    M = len(sites)
    left, right, xl, xr = _site_bracket(gfs, sites, i, a, S)
    if not xl < xr:
        return sites[i], True
    x = sites[i]
    clamped = False
    if not xl <= x <= xr:
        x = min(max(x, xl), xr)
        clamped = True
    gl, gr = gfs[(i - 1) % N], gfs[i % N]
    for _ in range(max_iter):
        if M == 1:
            s = gr.shoot(x, x + a * S)
            g = s.P1 - s.P0
            h11, h12, h22 = second_derivatives_from_jacobian(s.jacobian)
            d = h11 + 2 * h12 + h22
        else:
            sl = gl.shoot(left, x)
            sr = gr.shoot(x, right)
            g = sl.P1 - sr.P0
            d = second_derivatives_from_jacobian(sl.jacobian)[2] + second_derivatives_from_jacobian(sr.jacobian)[0]
        if abs(g) <= tol:
            break
        if g > 0:
            xr = x
        else:
            xl = x
        x_new = x - g / d if d > 0 else math.nan
        if not (xl < x_new < xr):
            x_new = 0.5 * (xl + xr)
        if x_new == x or xr - xl < 1e-15 * max(1.0, abs(x)):
            break
        x = x_new
    return x, clamped


def _normalize(sites, S):
    shift = math.floor(sites[0] / S) * S
    return sites - shift


def _solve_from(gfs, a, b, x0, opts: MinimizeOptions):
    S = _period(gfs)
    M = len(x0)
    x = np.array(x0, dtype=float)
    prob = _ActionProblem(gfs, a, b, S)
    clamps = 0
    sweeps = 0
    best_res = math.inf
    while sweeps < opts.max_sweeps:
        for _ in range(opts.gs_sweeps):
            for i in range(M):
                x[i], c = _site_solve(gfs, x, i, a, S, 0.1 * opts.tol, opts.site_max_iter)
                if c:
                    clamps += 1
                    log.debug("site %d clamped into its band", i)
            sweeps += 1
            res = float(np.max(np.abs(prob.jac(x))))
            best_res = min(best_res, res)
            if res < opts.tol:
                break
        if best_res < opts.tol:
            break
        if opts.polish:
            out = _sp_minimize(prob.fun, x, jac=prob.jac, hess=prob.hess, method="trust-exact",
                               options={"gtol": 0.1 * opts.tol, "maxiter": 200})
            if prob.fun(out.x) < 1e299:
                x = np.array(out.x)
            res = float(np.max(np.abs(prob.jac(x))))
            best_res = min(best_res, res)
            if res < opts.tol:
                break
    shots = prob.shots(x)
    res = float(np.max(np.abs(_gradient(shots))))
    return x, shots, res, clamps, sweeps


def uniform_configuration(a, b, N, theta0=0.0, S=1.0) -> np.ndarray:
    M = b * N
    return theta0 + np.arange(M) * (a * S / M)


def minimize(gfs, a: int, b: int, init=None, opts: MinimizeOptions | None = None) -> MatherOrbit:
    """Least-action stationary (a, b) configuration over the factors.

    Gauss-Seidel site sweeps are followed by a trust-region polish of the full
    action; several shifted starts are tried and the lowest action wins.
    """
    opts = opts or MinimizeOptions()
    spec = gfs[0].factor.spec
    check_rotation(spec, a, b)
    N = len(gfs)
    S = spec.S
    if init is not None:
        starts = [np.asarray(init, dtype=float)]
    else:
        starts = [uniform_configuration(a, b, N, k * S / opts.n_starts, S) for k in range(opts.n_starts)]
        if opts.seed is not None:
            order = np.random.default_rng(opts.seed).permutation(len(starts))
            starts = [starts[k] for k in order]
    results = []
    best_fail = None
    for k, x0 in enumerate(starts):
        try:
            x, shots, res, clamps, sweeps = _solve_from(gfs, a, b, x0, opts)
        except DomainError as exc:
            log.info("start %d abandoned: %s", k, exc)
            continue
        if res >= opts.tol:
            if best_fail is None or res < best_fail[0]:
                best_fail = (res, x)
            continue
        x = _normalize(x, S)
        shots = _segments(gfs, a, b, x, S)
        act = float(sum(s.h for s in shots))
        results.append((act, x, shots, res, clamps, sweeps))
    if not results:
        res = best_fail[0] if best_fail else math.inf
        raise ConvergenceError(f"no start reached stationarity for (a, b) = ({a}, {b})", res,
                               None if best_fail is None else best_fail[1])
    results.sort(key=lambda r: r[0])
    best_act = results[0][0]
    tied = [r for r in results if r[0] - best_act <= TIE_TOL]
    tied.sort(key=lambda r: r[1][0])
    act, x, shots, res, clamps, sweeps = tied[0]
    momenta = np.array([s.P0 for s in shots])
    left = np.array([shots[i - 1].P1 for i in range(len(shots))])
    orbit = MatherOrbit(
        a=a, b=b, N=N, S=S, sites=x, momenta=momenta, momenta_left=left, action=act, residual=res,
        clamps=sum(r[4] for r in results), sweeps=sweeps,
        starts=[{"action": r[0], "theta0": float(r[1][0]), "residual": r[3]} for r in results],
    )
    pts = orbit.map_points()[0]
    ext = np.append(pts, pts[0] + a * S)
    orbit.flags["map_sites_nondecreasing"] = bool(np.all(np.diff(ext) >= -EQUAL_TOL)) if a >= 0 else None
    orbit.flags["action_dispersion"] = float(results[-1][0] - results[0][0])
    return orbit


@dataclass
class ReconstructionReport:
    max_mismatch: float
    mismatches: np.ndarray
    winding_error: float
    passed: bool

    def as_dict(self):
        return {"max_mismatch": self.max_mismatch, "winding_error": self.winding_error, "passed": self.passed}


def reconstruct_orbit(gfs, orbit: MatherOrbit, threshold: float = 1e-6) -> ReconstructionReport:
    """Push each (theta_i, r_i) through its factor and compare with the next site."""
    N = len(gfs)
    M = orbit.b * N
    S = orbit.S
    mism = np.empty(M)
    for i in range(M):
        z = gfs[i % N].factor(orbit.sites[i], orbit.momenta[i])
        target = np.array([orbit.site(i + 1), orbit.momentum(i + 1)])
        mism[i] = float(np.max(np.abs(z - target)))
    # compose all factors over b periods from the first site
    z = np.array([orbit.sites[0], orbit.momenta[0]])
    for i in range(M):
        z = gfs[i % N].factor(z[0], z[1])
    wind = float(abs(z[0] - orbit.sites[0] - orbit.a * S))
    mx = float(mism.max())
    report = ReconstructionReport(mx, mism, wind, bool(mx < threshold and wind < threshold))
    orbit.flags["genuine_orbit"] = report.passed
    return report


def comparability(orbit: MatherOrbit, translates, tol: float = EQUAL_TOL) -> dict:
    """Compare translates (p, q): (theta_{i + qN} - p S) against theta_i over a period.

    Returns '<', '=', '>' per translate, or ('crossing', i) at the first site
    where the order changes.
    """
    M = orbit.b * orbit.N
    out = {}
    base = np.array([orbit.site(i) for i in range(M)])
    for p, q in translates:
        tr = np.array([orbit.site(i + q * orbit.N) for i in range(M)]) - p * orbit.S
        d = tr - base
        if np.all(np.abs(d) <= tol):
            out[(p, q)] = "="
        elif np.all(d < -tol):
            out[(p, q)] = "<"
        elif np.all(d > tol):
            out[(p, q)] = ">"
        else:
            sgn = np.sign(np.where(np.abs(d) <= tol, 0.0, d))
            first = int(np.nonzero(sgn != sgn[0])[0][0]) if np.any(sgn != sgn[0]) else 0
            out[(p, q)] = ("crossing", first)
    orbit.flags["translates_ordered"] = all(not isinstance(v, tuple) for v in out.values())
    return out


# ---------------------------------------------------------------------------
# rotation numbers


def _bump_weights(n):
    t = (np.arange(n) + 0.5) / n
    w = np.exp(-1.0 / (t * (1.0 - t)))
    return w / w.sum()


def rotation_from_lifts(x) -> tuple[float, float, float]:
    """Weighted Birkhoff average of increments of a lifted sequence.

    Returns (estimate, error_bar, naive) where the error bar compares the
    estimate over the full sequence with the one over its first half, and
    naive = (x_n - x_0) / n.
    """
    x = np.asarray(x, dtype=float)
    inc = np.diff(x)
    n = inc.size
    est = float(np.dot(_bump_weights(n), inc))
    half = float(np.dot(_bump_weights(n // 2), inc[: n // 2]))
    return est, abs(est - half), float((x[-1] - x[0]) / n)


@dataclass
class RotationEstimate:
    omega: float
    error: float
    naive: float
    n_iter: int


def rotation_number(map_: CylinderMap, z0, n_iter: int = 1000) -> RotationEstimate:
    """Rotation number of the orbit of z0, in lift units per iterate."""
    if n_iter < 1000:
        raise DomainError(f"n_iter must be at least 1000, got {n_iter}")
    xs = np.empty(n_iter + 1)
    z = np.asarray(z0, dtype=float)
    xs[0] = z[0]
    for k in range(n_iter):
        z = map_(z)
        xs[k + 1] = z[0]
    est, err, naive = rotation_from_lifts(xs)
    return RotationEstimate(est, err, naive, n_iter)


def orbit_rotation_number(gfs, orbit: MatherOrbit, n_iter: int = 1000) -> RotationEstimate:
    """Rotation number of a periodic minimal orbit.

    Each period-map image of an orbit point is computed by the flow; the
    resulting increments are extended periodically (iterating the map itself
    from a hyperbolic orbit loses the orbit exponentially fast).
    """
    N = len(gfs)
    xs, rs = orbit.map_points()
    incs = []
    for j in range(orbit.b):
        z = np.array([xs[j], rs[j]])
        for fac in gfs:
            z = fac.factor(z[0], z[1])
        incs.append(z[0] - xs[j])
    reps = -(-n_iter // orbit.b)
    seq = np.tile(np.array(incs), reps)[:n_iter]
    lifts = np.concatenate([[xs[0]], xs[0] + np.cumsum(seq)])
    est, err, naive = rotation_from_lifts(lifts)
    return RotationEstimate(est, err, naive, n_iter)


# ---------------------------------------------------------------------------
# hull functions


@dataclass
class HullFunctions:
    omega: Fraction
    xi: np.ndarray
    phi_base: np.ndarray
    phi_shift: np.ndarray
    eta: np.ndarray
    alpha: float
    certificates: dict

    @property
    def phi(self) -> np.ndarray:
        return self.phi_base + self.phi_shift

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("xi,phi,eta\n")
        for x, p, e in zip(self.xi, self.phi, self.eta):
            buf.write(f"{float(x)!r},{float(p)!r},{float(e)!r}\n")
        return buf.getvalue()


def _solve_index(a, b, d):
    """(j, k) with j a - k b = d and 0 <= j < b."""
    if b == 1:
        return 0, -d
    inv = pow(a % b, -1, b)
    j = (d * inv) % b
    k, rem = divmod(j * a - d, b)
    assert rem == 0
    return j, k


def hull_sample(orbit: MatherOrbit, m: int, n: int):
    """phi and eta at xi = m / n as (base, integer shift, eta), using the left-continuous staircase."""
    a, b = orbit.a, orbit.b
    xs, _ = orbit.map_points()
    d = -((-b * m) // n)  # ceil(b m / n)
    j, k = _solve_index(a, b, d)
    # momentum arriving at map site j equals the momentum leaving it at stationarity;
    # the arriving one is the derivative of h in its second slot
    eta = float(orbit.momenta_left[j * orbit.N])
    return float(xs[j]), -k, eta


def hull_functions(gfs, orbit: MatherOrbit, grid_size: int = 256, window: int = 9) -> HullFunctions:
    """Sample phi, eta on xi = m / grid_size for m in [0, 2 grid_size) and certify them."""
    a, b = orbit.a, orbit.b
    if math.gcd(a, b) != 1:
        raise DomainError(f"a and b must be coprime, got ({a}, {b})")
    S = orbit.S
    n = grid_size
    ms = np.arange(2 * n)
    samples = [hull_sample(orbit, int(m), n) for m in ms]
    base = np.array([s[0] for s in samples])
    shift = np.array([s[1] for s in samples], dtype=np.int64)
    eta = np.array([s[2] for s in samples])
    phi = base + shift * S

    lo, hi = slice(0, n), slice(n, 2 * n)
    periodic_phi = bool(np.array_equal(base[lo], base[hi]) and np.all(shift[hi] - shift[lo] == 1))
    periodic_eta = bool(np.array_equal(eta[lo], eta[hi]))
    monotone = bool(np.all(np.diff(phi) >= 0))

    alpha = convexity_surrogate(gfs, orbit, window)
    P, E = phi[lo], eta[lo]
    dphi = P[None, :] - P[:, None]
    deta = np.abs(E[None, :] - E[:, None])
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    slack = 1e-9 * max(1.0, float(np.max(np.abs(E))))
    violations = int(np.count_nonzero((deta > alpha * dphi + slack) & upper))
    tv = float(np.sum(np.abs(np.diff(np.append(E, E[0])))))
    certs = {
        "phi_periodic": periodic_phi,
        "eta_periodic": periodic_eta,
        "phi_monotone": monotone,
        "lipschitz_violations": violations,
        "alpha_surrogate": alpha,
        "eta_total_variation": tv,
        "note": "rational rotation number: phi is a left-continuous staircase through the orbit sites",
    }
    certs["passed"] = periodic_phi and periodic_eta and monotone and violations == 0
    return HullFunctions(Fraction(a, b), ms[lo] / n, base[lo], (shift[lo] * S), eta[lo], alpha, certs)


def convexity_surrogate(gfs, orbit: MatherOrbit, window: int = 9) -> float:
    """max over factors of |d11 h| and |d22 h| on a window around the orbit increments."""
    N = len(gfs)
    M = orbit.b * N
    incs = np.array([orbit.site(i + 1) - orbit.site(i) for i in range(M)])
    best = 0.0
    for k, gf in enumerate(gfs):
        d = incs[k::N]
        lo_b, hi_b = gf.band
        span = max(0.05 * gf.L, float(d.max() - d.min()))
        lo = max(lo_b, float(d.min()) - span)
        hi = min(hi_b, float(d.max()) + span)
        thetas = np.linspace(0.0, orbit.S, window, endpoint=False)
        deltas = np.linspace(lo, hi, window)
        best = max(best, gf.convexity_surrogate(thetas, deltas))
    return best


def continued_fraction_convergents(x, cap: int = 200) -> list[tuple[int, int]]:
    """Convergents a_k / b_k of x with b_k <= cap."""
    fr = Fraction(x) if not isinstance(x, Fraction) else x
    out = []
    h0, h1 = 0, 1
    k0, k1 = 1, 0
    while True:
        q = math.floor(fr)
        h0, h1 = h1, q * h1 + h0
        k0, k1 = k1, q * k1 + k0
        if k1 > cap:
            break
        out.append((h1, k1))
        rem = fr - q
        if rem == 0:
            break
        fr = 1 / rem
    return out
