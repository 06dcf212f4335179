"""Adaptive integration of the pendulum systems, variational equations and the
small-delta expansion of the scaled flow.

Three systems are available, all driven by the same ModelSpec:

* CANONICAL  (q, p):  q' = p / sqrt(1 + p^2),           p' = g(q) + f(t)
* SHIFTED    (Q, P):  Q' = (P + F) / sqrt(1 + (P + F)^2), P' = g(Q)
  where P = p - F(t)
* SCALED     (u, v):  the chart P = p - G(q) - F(t), u = Q, P = 1 / (delta v),
  in which the motion is a small perturbation of u' = 1, v' = 0.
"""

from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels as K
from .errors import DomainError, IntegrationError
from .model import ModelSpec

TOL_MIN, TOL_MAX = 1e-14, 1e-3
DELTA_CAP = 0.5


class System(enum.IntEnum):
    CANONICAL = K.CANONICAL
    SCALED = K.SCALED
    SHIFTED = K.SHIFTED


@dataclass(frozen=True)
class SystemId:
    system: System
    delta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "system", System(self.system))
        if not self.delta >= 0:
            raise DomainError(f"delta must be >= 0, got {self.delta!r}")

    @property
    def label(self) -> str:
        if self.system is System.SCALED:
            return f"scaled(delta={self.delta!r})"
        return self.system.name.lower()


def _as_system(sys, delta=None) -> SystemId:
    if isinstance(sys, SystemId):
        return sys if delta is None else SystemId(sys.system, delta)
    return SystemId(System(sys), 0.0 if delta is None else delta)


@dataclass
class FlowResult:
    system: SystemId
    t0: float
    t1: float
    state: np.ndarray
    times: np.ndarray
    samples: np.ndarray
    jacobian: np.ndarray | None = None
    action: float | None = None
    steps: int = 0
    rejects: int = 0
    sample_jacobians: np.ndarray | None = field(default=None, repr=False)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.jacobian))

    def summary(self) -> dict:
        out = {
            "system": self.system.label,
            "t0": self.t0,
            "t1": self.t1,
            "final_state": [float(x) for x in self.state],
            "steps": self.steps,
            "rejects": self.rejects,
        }
        if self.jacobian is not None:
            out["jacobian"] = self.jacobian.tolist()
            out["det_minus_one"] = self.det - 1.0
        if self.action is not None:
            out["action"] = self.action
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        with_jac = self.sample_jacobians is not None
        cols = ["t", "q", "p"] + (["J11", "J12", "J21", "J22"] if with_jac else [])
        buf.write(",".join(cols) + "\n")
        for i, t in enumerate(self.times):
            row = [t, self.samples[i, 0], self.samples[i, 1]]
            if with_jac:
                row += list(self.sample_jacobians[i].ravel())
            buf.write(",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()


def _check_tol(tol):
    if not (TOL_MIN <= tol <= TOL_MAX):
        raise DomainError(f"tol must lie in [{TOL_MIN:g}, {TOL_MAX:g}], got {tol!r}")


_EMPTY = np.empty(0)


def _run(sid: SystemId, spec: ModelSpec, t0, t1, z0, tol, jacobian, action, t_eval, record, jac0=None):
    _check_tol(tol)
    y0 = [float(z0[0]), float(z0[1])]
    if jacobian:
        y0 += list(np.eye(2).ravel() if jac0 is None else np.asarray(jac0, dtype=float).ravel())
    if action:
        y0.append(0.0)
    y0 = np.array(y0)
    if not np.all(np.isfinite(y0)):
        raise DomainError(f"initial state must be finite, got {z0!r}")
    te = _EMPTY if t_eval is None else np.ascontiguousarray(t_eval, dtype=float)
    if te.size:
        lo, hi = min(t0, t1), max(t0, t1)
        if te.min() < lo or te.max() > hi:
            raise DomainError("t_eval must lie inside the integration interval")
        d = np.diff(te) * (1 if t1 >= t0 else -1)
        if np.any(d < 0):
            raise DomainError("t_eval must be ordered in the direction of integration")
    status, t, y, na, nr, ev, rt, ry, _ = K.dopri5(
        int(sid.system), spec.params, float(sid.delta), float(t0), float(t1), y0, float(tol),
        bool(jacobian), bool(action), te, bool(record), 0.0,
    )
    if status != K.OK:
        reason = {K.UNDERFLOW: "step size underflow", K.TOO_MANY_STEPS: "step budget exhausted"}.get(
            status, "integration failure"
        )
        raise IntegrationError(f"{reason} in {sid.label} system", float(t))
    return y, na, nr, ev, rt, ry


def integrate(
    sys,
    spec: ModelSpec,
    t0: float,
    t1: float,
    z0,
    tol: float = 1e-10,
    *,
    delta: float | None = None,
    jacobian: bool = False,
    action: bool = False,
    t_eval=None,
    record: bool = False,
) -> FlowResult:
    """Integrate one of the three systems from (t0, z0) to t1.

    Dense samples are returned at t_eval (interpolated) and, with record=True,
    at every accepted step. The action slot integrates the Lagrangian
    p dq - H dt of the chosen system (not defined for SCALED).
    """
    sid = _as_system(sys, delta)
    y, na, nr, ev, rt, ry = _run(sid, spec, t0, t1, z0, tol, jacobian, action, t_eval, record)
    if t_eval is not None and record:
        times = np.concatenate([np.asarray(t_eval, float), rt])
        samples = np.concatenate([ev, ry])
        order = np.argsort(times, kind="stable")
        if t1 < t0:
            order = order[::-1]
        times, samples = times[order], samples[order]
    elif t_eval is not None:
        times, samples = np.asarray(t_eval, float), ev
    elif record:
        times, samples = rt, ry
    else:
        times, samples = np.array([t0, t1], float), np.vstack([np.asarray(z0, float)[:2], y[:2]])
    jac = y[2:6].reshape(2, 2).copy() if jacobian else None
    sample_jac = samples[:, 2:6].reshape(-1, 2, 2) if (jacobian and samples.shape[1] >= 6) else None
    return FlowResult(
        system=sid,
        t0=float(t0),
        t1=float(t1),
        state=y[:2].copy(),
        times=times,
        samples=samples[:, :2].copy(),
        jacobian=jac,
        action=float(y[-1]) if action else None,
        steps=int(na),
        rejects=int(nr),
        sample_jacobians=sample_jac,
    )


def integrate_variational(sys, spec, t0, t1, z0, tol=1e-10, **kw) -> FlowResult:
    """Integrate the state jointly with J = dz(t1)/dz(t0), J(t0) = I."""
    return integrate(sys, spec, t0, t1, z0, tol, jacobian=True, **kw)


def flow_point(sys, spec, t0, t1, z0, tol=1e-10, delta=None, jacobian=False, action=False):
    """Low-overhead variant of integrate returning (state, jacobian, action)."""
    sid = _as_system(sys, delta)
    y, *_ = _run(sid, spec, t0, t1, z0, tol, jacobian, action, None, False)
    jac = y[2:6].reshape(2, 2) if jacobian else None
    return y[:2].copy(), jac, (float(y[-1]) if action else None)


# ---------------------------------------------------------------------------
# small-delta expansion of the scaled flow


def delta_derivatives_at_zero(u0, v0, t):
    """Closed forms at delta = 0: z = (u0 + t, v0), dz/d delta = 0, d2z/d delta2 = (-v0^2 t, 0)."""
    z = np.array([u0 + t, v0], dtype=float)
    X = np.zeros(2)
    Y = np.array([-(v0 * v0) * t, 0.0])
    return z, X, Y


def free_scaled_flow(u0, v0, t, delta):
    """Exact scaled flow when g = 0 and f = 0: v is constant, u' = 1 / sqrt(1 + delta^2 v^2)."""
    return u0 + t / np.sqrt(1.0 + (delta * v0) ** 2), v0 * np.ones_like(np.asarray(u0, float))


@dataclass
class RemainderReport:
    delta: float
    u_grid: np.ndarray
    v_grid: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    sup_norm: float
    c1_norm: float
    c2_norm: float
    note: str = (
        "remainder smallness is needed in high C^k norms; only C0, C1, C2 "
        "finite-difference norms are reported here"
    )

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "grid": [len(self.u_grid), len(self.v_grid)],
            "sup_norm": self.sup_norm,
            "c1_norm": self.c1_norm,
            "c2_norm": self.c2_norm,
            "note": self.note,
        }


def _fd_norms(fields, du, dv):
    """sup over fields of (|f|, max first differences, max second differences)."""
    c0 = c1 = c2 = 0.0
    for f in fields:
        c0 = max(c0, float(np.max(np.abs(f))))
        fu, fv = np.gradient(f, du, dv)
        c1 = max(c1, float(np.max(np.abs(fu))), float(np.max(np.abs(fv))))
        for d in (np.gradient(fu, du, dv) + np.gradient(fv, du, dv)):
            c2 = max(c2, float(np.max(np.abs(d))))
    return c0, max(c0, c1), max(c0, c1, c2)


def scaled_endpoints(spec: ModelSpec, delta, u, v, tol=1e-12, t0=0.0):
    """Time-T images of a grid under the scaled flow; arrays of shape (len(u), len(v))."""
    T = spec.T
    u1 = np.empty((len(u), len(v)))
    v1 = np.empty_like(u1)
    for i, ui in enumerate(u):
        for j, vj in enumerate(v):
            z, _, _ = flow_point(System.SCALED, spec, t0, t0 + T, (ui, vj), tol, delta=delta)
            u1[i, j], v1[i, j] = z
    return u1, v1


def _grid(n_u, n_v, v_range=(1.0, 3.0)):
    if n_u < 32 or n_v < 32:
        raise DomainError(f"grid resolution must be at least 32x32, got {n_u}x{n_v}")
    return np.linspace(0.0, 1.0, n_u), np.linspace(v_range[0], v_range[1], n_v)


def expansion_remainder(spec: ModelSpec, delta: float, n_u: int = 32, n_v: int = 32, tol: float = 1e-12):
    """Remainder R = (2/delta^2) [z(T; z0, delta) - z(T; z0, 0)] - Y(T; z0, 0) on [0,1]x[1,3].

    z(T; z0, 0) and Y are the closed forms; the delta > 0 flow is integrated.
    """
    bound = admissible_delta(spec)
    if not (0 < delta <= bound):
        raise DomainError(f"delta must lie in (0, {bound!r}], got {delta!r}")
    u, v = _grid(n_u, n_v)
    U, V = np.meshgrid(u, v, indexing="ij")
    u1, v1 = scaled_endpoints(spec, delta, u, v, tol)
    T = spec.T
    R1 = 2.0 / delta**2 * (u1 - (U + T)) + V**2 * T
    R2 = 2.0 / delta**2 * (v1 - V)
    c0, c1, c2 = _fd_norms((R1, R2), u[1] - u[0], v[1] - v[0])
    return RemainderReport(delta, u, v, R1, R2, c0, c1, c2)


@lru_cache(maxsize=64)
def admissible_delta(spec: ModelSpec, tol: float = 1e-10, n: int = 9, cap: float = DELTA_CAP) -> float:
    """Largest delta <= cap (to bisection resolution) for which the scaled flow over [0, T]
    succeeds from every node of the grid [0,1] x [1/2, 7/2]."""

    def ok(delta):
        try:
            for u in np.linspace(0.0, 1.0, n):
                for v in np.linspace(0.5, 3.5, n):
                    z, _, _ = flow_point(System.SCALED, spec, 0.0, spec.T, (u, v), tol, delta=delta)
                    if not np.all(np.isfinite(z)) or z[1] <= 0:
                        return False
        except IntegrationError:
            return False
        return True

    if ok(cap):
        return cap
    lo, hi = 0.0, cap
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
