"""Generating functions of the twist factors.

For a factor over [tau, tau + L] the generating function h(theta, theta1) is
the action of the trajectory that leaves Q = theta at time tau and arrives at
Q = theta1 at time tau + L. It satisfies

    d h / d theta = -P0,    d h / d theta1 = P1,

so the factor map is recovered implicitly from h. The boundary-value problem
is solved by shooting on the initial momentum.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InfeasibleError
from .poincare import TwistFactor

P_LIMIT = 1e9
# velocity parameter for P = P_LIMIT; shooting works in s = P / sqrt(1 + P^2)
S_LIMIT = P_LIMIT / math.sqrt(1.0 + P_LIMIT**2)


@dataclass(frozen=True)
class ShotResult:
    theta: float
    theta1: float
    P0: float
    P1: float
    jacobian: np.ndarray
    h: float
    residual: float
    iterations: int


def _p_of_s(s):
    return s / math.sqrt((1.0 - s) * (1.0 + s))


def _dp_ds(s):
    return ((1.0 - s) * (1.0 + s)) ** -1.5


class GeneratingFunction:
    """Shooting realization of the generating function of one factor."""

    def __init__(self, factor: TwistFactor, shoot_tol: float = 1e-12, margin: float | None = None,
                 lattice_step: float | None = None, max_iter: int = 100):
        self.factor = factor
        self.shoot_tol = shoot_tol
        self.margin = max(1e-3 * factor.L, shoot_tol) if margin is None else margin
        self.lattice_step = lattice_step
        self.max_iter = max_iter
        self._cache: dict[tuple[float, float], ShotResult] = {}
        self.n_shots = 0

    @property
    def L(self) -> float:
        return self.factor.L

    @property
    def band(self) -> tuple[float, float]:
        """Admissible range of theta1 - theta."""
        return -self.L + self.margin, self.L - self.margin

    def in_band(self, theta, theta1) -> bool:
        lo, hi = self.band
        return lo <= theta1 - theta <= hi

    def _on_lattice(self, x) -> bool:
        k = x / self.lattice_step
        return abs(k - round(k)) < 1e-12 * max(1.0, abs(k))

    def _eval(self, theta, P0, action=False):
        z, J, a = self.factor.evaluate(theta, P0, jacobian=True, action=action)
        return z, J, a

    def shoot(self, theta: float, theta1: float) -> ShotResult:
        """Solve Q(tau + L; tau, theta, P0) = theta1 for P0 and return the full shot."""
        theta, theta1 = float(theta), float(theta1)
        lo_b, hi_b = self.band
        delta = theta1 - theta
        if not (lo_b <= delta <= hi_b):
            raise DomainError(
                f"theta1 - theta = {delta!r} outside the admissible band [{lo_b!r}, {hi_b!r}]"
            )
        key = None
        if self.lattice_step is not None and self._on_lattice(theta) and self._on_lattice(theta1):
            key = (round(theta / self.lattice_step), round(theta1 / self.lattice_step))
            if key in self._cache:
                return self._cache[key]
        res = self._shoot(theta, theta1)
        if key is not None:
            self._cache[key] = res
        return res

    def _shoot(self, theta, theta1):
        self.n_shots += 1
        L = self.L
        _, F_mid = self.factor.spec.forcing(self.factor.tau + 0.5 * L)
        c = (theta1 - theta) / L
        m = c / math.sqrt((1 - c) * (1 + c))
        s = math.tanh(math.asinh(m - float(F_mid)))  # s = P/sqrt(1+P^2) for the guess
        s = min(max(s, -S_LIMIT), S_LIMIT)
        # bracket in s: residual is increasing in s by the twist property
        s_lo, s_hi = -1.0, 1.0
        r_lo = r_hi = None
        best = None
        for it in range(1, self.max_iter + 1):
            P0 = _p_of_s(s)
            z, J, a = self._eval(theta, P0, action=True)
            r = z[0] - theta1
            if best is None or abs(r) < abs(best[1]):
                best = (s, r, z, J, a)
            if abs(r) <= self.shoot_tol:
                break
            if r > 0:
                s_hi, r_hi = s, r
            else:
                s_lo, r_lo = s, r
            slope = J[0, 1] * _dp_ds(s)
            s_new = s - r / slope if slope > 0 else math.nan
            if not (s_lo < s_new < s_hi) or not math.isfinite(s_new):
                if r_lo is not None and r_hi is not None:
                    s_new = 0.5 * (s_lo + s_hi)
                elif r_hi is None:
                    if s >= S_LIMIT:
                        raise InfeasibleError(f"no bracket for theta1={theta1!r} with |P0| <= {P_LIMIT:g}")
                    s_new = min(0.5 * (s + 1.0), S_LIMIT)
                else:
                    if s <= -S_LIMIT:
                        raise InfeasibleError(f"no bracket for theta1={theta1!r} with |P0| <= {P_LIMIT:g}")
                    s_new = max(0.5 * (s - 1.0), -S_LIMIT)
            if s_new == s:
                break
            s = s_new
        else:
            it = self.max_iter
        s, _, z, J, a = best
        P0 = _p_of_s(s)
        resid = abs(z[0] - theta1)
        if resid > max(1e3 * self.shoot_tol, 1e-9):
            raise InfeasibleError(f"shooting stalled at residual {resid:.3e} for ({theta!r}, {theta1!r})")
        # h is evaluated along the shot; the small mismatch in the endpoint is
        # corrected to first order using dh/dtheta1 = P1
        h = a - z[1] * (z[0] - theta1)
        return ShotResult(theta, theta1, P0, float(z[1]), J.copy(), float(h), resid, it)

    def value(self, theta, theta1) -> float:
        return self.shoot(theta, theta1).h

    def derivatives(self, theta, theta1) -> tuple[float, float]:
        """(d1 h, d2 h) = (-P0, P1) from the shot trajectory."""
        r = self.shoot(theta, theta1)
        return -r.P0, r.P1

    def second_derivatives(self, theta, theta1) -> tuple[float, float, float]:
        """(d11 h, d12 h, d22 h) from the factor Jacobian at the shot."""
        return second_derivatives_from_jacobian(self.shoot(theta, theta1).jacobian)

    def legendre_diagnostic(self, thetas, deltas, eps: float | None = None, rel_gap: float = 1e-3):
        """Estimate d12 h two ways (difference of P0 in theta1, and -1/J12) on a grid."""
        rows = []
        for th in thetas:
            for d in deltas:
                r = self.shoot(th, th + d)
                e = eps if eps is not None else fd_step(self.L, d)
                p_plus = self.shoot(th, th + d + e).P0
                p_minus = self.shoot(th, th + d - e).P0
                fd = -(p_plus - p_minus) / (2 * e)
                jac = -1.0 / r.jacobian[0, 1]
                rows.append((th, d, fd, jac, abs(fd - jac) / abs(jac)))
        arr = np.array(rows)
        d12 = arr[:, 3]
        return {
            "nodes": arr,
            "min_d12": float(d12.min()),
            "max_d12": float(d12.max()),
            "all_negative": bool(np.all(d12 < 0) and np.all(arr[:, 2] < 0)),
            "twist_margin_beta": float(1.0 / np.max(-d12)),
            "max_relative_gap": float(arr[:, 4].max()),
            "consistent": bool(arr[:, 4].max() < rel_gap),
        }

    def convexity_surrogate(self, thetas, deltas) -> float:
        """max of |d11 h| and |d22 h| over a window of nodes."""
        best = 0.0
        for th in thetas:
            for d in deltas:
                h11, _, h22 = self.second_derivatives(th, th + d)
                best = max(best, abs(h11), abs(h22))
        return best

    def surface_csv(self, thetas, deltas) -> str:
        buf = io.StringIO()
        buf.write("theta,theta1,h,d1h,d2h,d12h\n")
        for th in thetas:
            for d in deltas:
                r = self.shoot(th, th + d)
                _, h12, _ = second_derivatives_from_jacobian(r.jacobian)
                row = (th, th + d, r.h, -r.P0, r.P1, h12)
                buf.write(",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()


def second_derivatives_from_jacobian(J) -> tuple[float, float, float]:
    """With P0(theta, theta1) defined by Q1(theta, P0) = theta1:
    d11 h = J11/J12, d12 h = -1/J12, d22 h = J22/J12."""
    J12 = J[0, 1]
    return float(J[0, 0] / J12), float(-1.0 / J12), float(J[1, 1] / J12)


def fd_step(L: float, delta: float) -> float:
    """Centered-difference step that stays well inside the band."""
    return min(1e-4, 0.005 * (L - abs(delta)))


def free_value(L, delta):
    """Closed-form h for g = 0 and F = 0."""
    return -np.sqrt(L * L - np.asarray(delta, float) ** 2)


def free_mixed_derivative(L, delta):
    return -L * L / (L * L - np.asarray(delta, float) ** 2) ** 1.5
