"""Period map, small-time factor maps and map-level diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError
from .flow import System, admissible_delta, expansion_remainder, flow_point
from .model import Chart, ModelSpec, chart_to_QP


@dataclass(frozen=True)
class CylinderMap:
    """Lifted map of the plane commuting with (q, p) -> (q + period, p).

    step(z) returns (image, jacobian); the jacobian may be None when the
    underlying evaluator cannot provide it.
    """

    step: Callable
    period: float
    label: str

    def __call__(self, z) -> np.ndarray:
        return self.step(z, False)[0]

    def with_jacobian(self, z):
        return self.step(z, True)


def poincare_map(spec: ModelSpec, z0, tol: float = 1e-12, jacobian: bool = True):
    """Time-T map of the canonical system from t = 0; returns (z1, J)."""
    z1, J, _ = flow_point(System.CANONICAL, spec, 0.0, spec.T, z0, tol, jacobian=jacobian)
    return z1, J


def poincare(spec: ModelSpec, tol: float = 1e-12) -> CylinderMap:
    return CylinderMap(lambda z, jac: poincare_map(spec, z, tol, jac), spec.S, "period map")


class TwistFactor:
    """Flow of the shifted system over [tau, tau + L], in the chart P = p - F(t).

    The duration must satisfy L < pi / sqrt(sup|g'|) (with the coefficient-sum
    bound for sup|g'|), which guarantees a positive twist.
    """

    def __init__(self, spec: ModelSpec, tau: float, L: float, tol: float = 1e-12):
        bound = spec.potential.twist_length_bound()
        if not (0 < L < bound):
            raise DomainError(f"factor duration L={L!r} must satisfy 0 < L < pi/sqrt(sup|g'|) = {bound!r}")
        self.spec = spec
        self.tau = float(tau)
        self.L = float(L)
        self.tol = tol

    def __repr__(self):
        return f"TwistFactor(tau={self.tau!r}, L={self.L!r})"

    @property
    def rho_plus(self) -> float:
        return self.L

    @property
    def rho_minus(self) -> float:
        return -self.L

    @property
    def momentum_bound(self) -> float:
        """M = L sup|g| bounds |P1 - P0|."""
        return self.L * self.spec.potential.sup_bound

    def evaluate(self, Q0, P0, jacobian=False, action=False, tol=None):
        """Return (z1, J, action) for the factor started at (Q0, P0)."""
        return flow_point(
            System.SHIFTED, self.spec, self.tau, self.tau + self.L, (Q0, P0),
            self.tol if tol is None else tol, jacobian=jacobian, action=action,
        )

    def __call__(self, Q0, P0) -> np.ndarray:
        return self.evaluate(Q0, P0)[0]

    def as_map(self) -> CylinderMap:
        return CylinderMap(
            lambda z, jac: self.evaluate(z[0], z[1], jacobian=jac)[:2],
            self.spec.S,
            f"factor(tau={self.tau!r}, L={self.L!r})",
        )

    def twist_margin(self, Q_grid, P_grid) -> float:
        """Smallest dQ1/dP0 over the grid (positive means twist holds there)."""
        worst = math.inf
        for Q in Q_grid:
            for P in P_grid:
                _, J, _ = self.evaluate(Q, P, jacobian=True)
                worst = min(worst, J[0, 1])
        return worst


def factor_map(factor: TwistFactor, spec: ModelSpec | None, Q0, P0) -> np.ndarray:
    """(Q1, P1) for the factor; spec, if given, must match the factor's model."""
    if spec is not None and spec != factor.spec:
        raise ValueError("factor was built for a different model")
    return factor(Q0, P0)


def factor_chain(spec: ModelSpec, N: int, tol: float = 1e-12) -> list[TwistFactor]:
    """The N factors of duration T/N whose composition is the period map."""
    if N < 1:
        raise DomainError(f"N must be a positive integer, got {N!r}")
    L = spec.T / N
    return [TwistFactor(spec, i * L, L, tol) for i in range(N)]


def twist_derivative(map_: CylinderMap | TwistFactor, point) -> float:
    """dTheta/dr: the (1, 2) entry of the map Jacobian at the point."""
    if isinstance(map_, TwistFactor):
        map_ = map_.as_map()
    _, J = map_.with_jacobian(point)
    if J is None:
        raise ValueError("map does not provide a Jacobian")
    return float(J[0, 1])


@dataclass
class CompositionReport:
    N: int
    L: float
    max_discrepancy: float
    n_points: int
    discrepancies: np.ndarray = field(repr=False)

    def as_dict(self):
        return {"N": self.N, "L": self.L, "max_discrepancy": self.max_discrepancy, "n_points": self.n_points}


def compose_factors(spec: ModelSpec, N: int, q_grid=None, p_grid=None, tol: float = 1e-12) -> CompositionReport:
    """Compare the period map with the composition of N factors, in the chart P = p - F(t)."""
    factors = factor_chain(spec, N, tol)
    q_grid = np.linspace(0.0, spec.S, 5, endpoint=False) if q_grid is None else np.asarray(q_grid, float)
    p_grid = np.linspace(-3.0, 3.0, 5) if p_grid is None else np.asarray(p_grid, float)
    disc = []
    for q in q_grid:
        for p in p_grid:
            z1, _ = poincare_map(spec, (q, p), tol, jacobian=False)
            direct = np.array(chart_to_QP(spec, spec.T, z1[0], z1[1], Chart.FORCING), dtype=float)
            Q, P = chart_to_QP(spec, 0.0, q, p, Chart.FORCING)
            z = np.array([float(Q), float(P)])
            for fac in factors:
                z = fac(z[0], z[1])
            disc.append(float(np.max(np.abs(z - direct))))
    disc = np.array(disc)
    return CompositionReport(N, spec.T / N, float(disc.max()), disc.size, disc)


def loop_exactness(map_: CylinderMap, p_level: float, n_samples: int = 512) -> float:
    """Loop integral of P1 dQ1 - P0 dQ0 over the circle {p = p_level}.

    The image curve is parametrized by the base angle; dQ1 = J11 dq along it,
    and the periodic integrand is summed with the trapezoid rule.
    """
    if n_samples < 512:
        raise DomainError(f"n_samples must be at least 512, got {n_samples}")
    S = map_.period
    q = np.arange(n_samples) * (S / n_samples)
    acc = 0.0
    for qi in q:
        z1, J = map_.with_jacobian((qi, p_level))
        acc += z1[1] * J[0, 0]
    return acc * (S / n_samples) - p_level * S


def contractible_loop_integral(map_: CylinderMap, center, radius: float, n_samples: int = 512) -> float:
    """Same loop integral over a small circle; vanishes for area-preserving maps."""
    th = 2 * np.pi * np.arange(n_samples) / n_samples
    c_q, c_p = center
    acc_img = 0.0
    acc_base = 0.0
    for t in th:
        dq, dp = -radius * math.sin(t), radius * math.cos(t)
        p = c_p + radius * math.sin(t)
        z1, J = map_.with_jacobian((c_q + radius * math.cos(t), p))
        acc_img += z1[1] * (J[0, 0] * dq + J[0, 1] * dp)
        acc_base += p * dq
    return (acc_img - acc_base) * (2 * np.pi / n_samples)


def scaled_map_residuals(spec: ModelSpec, delta: float, n_u: int = 32, n_v: int = 32, tol: float = 1e-12):
    """R1 = (2/delta^2)(u1 - u0 - T) + T v0^2 and R2 = (2/delta^2)(v1 - v0) on [0,1] x [1,3]."""
    return expansion_remainder(spec, delta, n_u, n_v, tol)


MOSER_LABEL = (
    "hypothesis diagnostics only: the existence of invariant curves follows from "
    "the invariant-curve theorem and is not recomputed here"
)


def moser_hypotheses_report(spec: ModelSpec, deltas=(0.1, 0.05), n_u: int = 32, n_v: int = 32, tol: float = 1e-12):
    """Twist function alpha(r) = -(T/2) r^2 on [1, 3] and the remainder norms per delta."""
    T = spec.T
    r = np.linspace(1.0, 3.0, 201)
    alpha = -(T / 2) * r**2
    dalpha = -T * r
    c0 = max(3 * T, 1 / T)
    rows = []
    Delta = admissible_delta(spec)
    for d in deltas:
        if not (0 < d <= Delta):
            rows.append({"delta": d, "skipped": f"outside admissible range (0, {Delta!r}]"})
            continue
        rows.append(scaled_map_residuals(spec, d, n_u, n_v, tol).as_dict())
    return {
        "label": MOSER_LABEL,
        "T": T,
        "alpha_1": -T / 2,
        "alpha_3": -9 * T / 2,
        "abs_alpha_prime_range": [float(np.min(np.abs(dalpha))), float(np.max(np.abs(dalpha)))],
        "c0": c0,
        "alpha_C4_norm": max(9 * T / 2, 3 * T, T),
        "admissible_delta": Delta,
        "residuals": rows,
        "notes": [
            "the smallness condition is stated for the two remainder components; they are R1, R2 here",
            "alpha' = -T r is negative on [1, 3]; |alpha'| is reported and the orientation "
            "reversal (u, v) -> (u, -v) would make it positive; the sign convention is left open",
            "only C0, C1, C2 finite-difference norms are computed; higher norms are not estimated",
        ],
        "alpha_samples": {"r": r.tolist(), "alpha": alpha.tolist()},
    }
