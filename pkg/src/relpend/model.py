"""Forcing, potential, Hamiltonian and coordinate charts.

The forcing f(t) and the potential force g(x) are finite trigonometric
polynomials, so their primitives F and G are available in closed form:

    f(t) = fbar + sum_k a_k cos(2 pi k t / T) + b_k sin(2 pi k t / T)
    g(x) =        sum_k c_k cos(2 pi k x / S) + d_k sin(2 pi k x / S)

F is chosen as fbar*t plus the zero-mean primitive of the periodic part, and
G as the zero-mean primitive of g.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import DomainError

Harmonic = tuple[int, float, float]


def _check_harmonics(harmonics) -> tuple[Harmonic, ...]:
    out = []
    for item in harmonics:
        if len(item) != 3:
            raise ValueError(f"harmonic must be a (k, cos, sin) triple, got {item!r}")
        k, a, b = item
        if int(k) != k or int(k) < 1:
            raise ValueError(f"harmonic index must be a positive integer, got {k!r}")
        out.append((int(k), float(a), float(b)))
    return tuple(out)


def _trig_series(x, period, harmonics):
    """Return (value, primitive, derivative) of sum c cos(wx) + d sin(wx)."""
    x = np.asarray(x, dtype=float)
    val = np.zeros_like(x)
    prim = np.zeros_like(x)
    der = np.zeros_like(x)
    for k, c, d in harmonics:
        w = 2.0 * math.pi * k / period
        cs, sn = np.cos(w * x), np.sin(w * x)
        val += c * cs + d * sn
        prim += (c * sn - d * cs) / w
        der += w * (d * cs - c * sn)
    return val, prim, der


@dataclass(frozen=True)
class ForcingSpec:
    """Time-periodic forcing f with period T, mean fbar and harmonics (k, a_k, b_k)."""

    period: float
    mean: float = 0.0
    harmonics: tuple[Harmonic, ...] = ()

    def __post_init__(self):
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ValueError(f"forcing period must be positive, got {self.period!r}")
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "harmonics", _check_harmonics(self.harmonics))

    @property
    def zero_mean(self) -> bool:
        return self.mean == 0.0

    @property
    def is_zero(self) -> bool:
        return self.mean == 0.0 and all(a == 0 and b == 0 for _, a, b in self.harmonics)

    def __call__(self, t):
        """Return (f(t), F(t))."""
        val, prim, _ = _trig_series(t, self.period, self.harmonics)
        t = np.asarray(t, dtype=float)
        return val + self.mean, prim + self.mean * t

    def sup_norm(self) -> float:
        return abs(self.mean) + sum(math.hypot(a, b) for _, a, b in self.harmonics)

    def primitive_sup_bound(self) -> float:
        """Upper bound for sup|F - fbar t|."""
        return sum(math.hypot(a, b) * self.period / (2 * math.pi * k) for k, a, b in self.harmonics)


@dataclass(frozen=True)
class PotentialSpec:
    """Space-periodic force g with period S and harmonics (k, c_k, d_k); no constant term."""

    period: float
    harmonics: tuple[Harmonic, ...] = ()

    def __post_init__(self):
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ValueError(f"potential period must be positive, got {self.period!r}")
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "harmonics", _check_harmonics(self.harmonics))

    @property
    def is_zero(self) -> bool:
        return all(c == 0 and d == 0 for _, c, d in self.harmonics)

    def __call__(self, x):
        """Return (G(x), g(x), g'(x))."""
        val, prim, der = _trig_series(x, self.period, self.harmonics)
        return prim, val, der

    @cached_property
    def sup_bound(self) -> float:
        """Coefficient-sum upper bound for sup|g|."""
        return float(sum(math.hypot(c, d) for _, c, d in self.harmonics))

    @cached_property
    def derivative_sup_bound(self) -> float:
        """Coefficient-sum upper bound for sup|g'|."""
        return float(sum(2 * math.pi * k / self.period * math.hypot(c, d) for k, c, d in self.harmonics))

    def grid_sup(self, n: int = 4096) -> tuple[float, float]:
        """Grid estimates of (sup|g|, sup|g'|); never exceed the coefficient bounds."""
        x = np.linspace(0.0, self.period, n, endpoint=False)
        _, g, dg = self(x)
        if len(g) == 0:
            return 0.0, 0.0
        return float(np.max(np.abs(g))), float(np.max(np.abs(dg)))

    def twist_length_bound(self) -> float:
        """Largest factor duration pi / sqrt(sup|g'|) for which small-time twist is guaranteed."""
        b = self.derivative_sup_bound
        return math.inf if b == 0 else math.pi / math.sqrt(b)


@dataclass(frozen=True)
class ModelSpec:
    forcing: ForcingSpec
    potential: PotentialSpec = field(default_factory=lambda: PotentialSpec(1.0))

    @property
    def T(self) -> float:
        return self.forcing.period

    @property
    def S(self) -> float:
        return self.potential.period

    @cached_property
    def params(self) -> np.ndarray:
        """Flat parameter array consumed by the compiled kernels."""
        g, f = self.potential.harmonics, self.forcing.harmonics
        head = [self.S, self.T, self.forcing.mean, float(len(g)), float(len(f))]
        body = [float(v) for tri in g for v in tri] + [float(v) for tri in f for v in tri]
        return np.array(head + body, dtype=float)


class PhasePoint(NamedTuple):
    q: float
    p: float


def eval_forcing(spec: ForcingSpec | ModelSpec, t):
    """Return (f(t), F(t))."""
    if isinstance(spec, ModelSpec):
        spec = spec.forcing
    return spec(t)


def eval_potential(spec: PotentialSpec | ModelSpec, x):
    """Return (G(x), g(x), g'(x))."""
    if isinstance(spec, ModelSpec):
        spec = spec.potential
    return spec(x)


def legendre(x, inverse: bool = False):
    """Velocity to momentum p = v / sqrt(1 - v^2); with inverse=True, v = p / sqrt(1 + p^2)."""
    x = np.asarray(x, dtype=float)
    if inverse:
        return x / np.sqrt(1.0 + x * x)
    if np.any(np.abs(x) >= 1.0):
        raise DomainError(f"velocity must satisfy |v| < 1, got {x!r}")
    return x / np.sqrt((1.0 - x) * (1.0 + x))


def hamiltonian(spec: ModelSpec, t, q, p):
    """H = sqrt(1 + p^2) - G(q) - f(t) q."""
    G, _, _ = spec.potential(q)
    f, _ = spec.forcing(t)
    return np.sqrt(1.0 + np.asarray(p, dtype=float) ** 2) - G - f * np.asarray(q, dtype=float)


def rescale_to_unit_period(spec: ModelSpec) -> ModelSpec:
    """Model in units where the potential has period 1.

    With y = x / S and s = t / S the new data are g1(y) = S g(S y) and
    f1(s) = S f(S s); a solution x(t) corresponds to y(s) = x(S s) / S.
    """
    S = spec.S
    if S == 1.0:
        return spec
    pot = PotentialSpec(1.0, tuple((k, S * c, S * d) for k, c, d in spec.potential.harmonics))
    frc = ForcingSpec(
        spec.T / S, S * spec.forcing.mean, tuple((k, S * a, S * b) for k, a, b in spec.forcing.harmonics)
    )
    return ModelSpec(frc, pot)


class Chart(enum.Enum):
    """Momentum charts (Q, P) of the lifted phase plane; Q = q in both."""

    # P = p - G(q) - F(t), used by the scaled system
    POTENTIAL_FORCING = "potential_forcing"
    # P = p - F(t), used by the small-time factor maps
    FORCING = "forcing"


def _chart_offset(spec, t, q, chart):
    _, F = spec.forcing(t)
    if chart is Chart.FORCING:
        return F
    if chart is Chart.POTENTIAL_FORCING:
        G, _, _ = spec.potential(q)
        return G + F
    raise ValueError(f"unknown chart {chart!r}")


def chart_to_QP(spec: ModelSpec, t, q, p, chart: Chart):
    if not isinstance(chart, Chart):
        raise ValueError(f"unknown chart {chart!r}")
    return np.asarray(q, dtype=float), p - _chart_offset(spec, t, q, chart)


def chart_from_QP(spec: ModelSpec, t, Q, P, chart: Chart):
    if not isinstance(chart, Chart):
        raise ValueError(f"unknown chart {chart!r}")
    return np.asarray(Q, dtype=float), P + _chart_offset(spec, t, Q, chart)


V_MIN, V_MAX = 0.5, 3.5


def _band_check(v, delta):
    v = np.asarray(v, dtype=float)
    slack = 1e-12 * V_MAX
    if np.any(v < V_MIN - slack) or np.any(v > V_MAX + slack) or np.any(~np.isfinite(v)):
        raise DomainError(
            f"P must lie in [2/(7 delta), 2/delta] = [{2 / (7 * delta)!r}, {2 / delta!r}] "
            f"so that v lies in [{V_MIN}, {V_MAX}]"
        )


def chart_to_uv(delta: float, Q, P):
    """(Q, P) -> (u, v) = (Q, 1 / (delta P)), restricted to v in [1/2, 7/2]."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta!r}")
    with np.errstate(divide="ignore"):
        v = 1.0 / (delta * np.asarray(P, dtype=float))
    _band_check(v, delta)
    return np.asarray(Q, dtype=float), v


def chart_from_uv(delta: float, u, v):
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta!r}")
    _band_check(v, delta)
    return np.asarray(u, dtype=float), 1.0 / (delta * np.asarray(v, dtype=float))


# ---------------------------------------------------------------------------
# model files

_TRIPLE = re.compile(r"\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)")
MODEL_KEYS = ("S", "T", "fbar", "g.harmonics", "f.harmonics")


def _parse_harmonics(text: str) -> tuple[Harmonic, ...]:
    text = text.strip()
    if not text:
        return ()
    out, pos = [], 0
    for m in _TRIPLE.finditer(text):
        gap = text[pos : m.start()].strip()
        if gap != ("" if pos == 0 else ","):
            raise ValueError(f"unexpected text {gap!r} in harmonics list")
        k = float(m.group(1))
        if k != int(k):
            raise ValueError(f"harmonic index must be an integer, got {m.group(1)!r}")
        out.append((int(k), float(m.group(2)), float(m.group(3))))
        pos = m.end()
    if text[pos:].strip():
        raise ValueError(f"unexpected trailing text {text[pos:].strip()!r} in harmonics list")
    return _check_harmonics(out)


def parse_model(text: str) -> ModelSpec:
    """Parse a model file; see README for the grammar. All problems are reported together."""
    values: dict[str, tuple[int, str]] = {}
    problems = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key=value, got {raw.strip()!r}")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in MODEL_KEYS:
            problems.append(f"line {lineno}: unknown key {key!r} (allowed: {', '.join(MODEL_KEYS)})")
        elif key in values:
            problems.append(f"line {lineno}: duplicate key {key!r} (first set on line {values[key][0]})")
        else:
            values[key] = (lineno, val)
    for req in ("S", "T"):
        if req not in values:
            problems.append(f"missing required key {req!r}")
    parsed = {}
    for key, (lineno, val) in values.items():
        try:
            parsed[key] = _parse_harmonics(val) if key.endswith("harmonics") else float(val)
        except ValueError as exc:
            problems.append(f"line {lineno}: bad value for {key!r}: {exc}")
    if problems:
        raise ValueError("\n".join(problems))
    try:
        return ModelSpec(
            ForcingSpec(parsed["T"], parsed.get("fbar", 0.0), parsed.get("f.harmonics", ())),
            PotentialSpec(parsed["S"], parsed.get("g.harmonics", ())),
        )
    except ValueError as exc:
        raise ValueError(str(exc)) from None


def _fmt_harmonics(h) -> str:
    return ", ".join(f"({k}, {a!r}, {b!r})" for k, a, b in h)


def format_model(spec: ModelSpec) -> str:
    return (
        f"S = {spec.S!r}\n"
        f"T = {spec.T!r}\n"
        f"fbar = {spec.forcing.mean!r}\n"
        f"g.harmonics = {_fmt_harmonics(spec.potential.harmonics)}\n"
        f"f.harmonics = {_fmt_harmonics(spec.forcing.harmonics)}\n"
    )


# ---------------------------------------------------------------------------
# presets


def free_model(T: float = 1.0, fbar: float = 0.0, forcing=(), S: float = 1.0) -> ModelSpec:
    """g = 0; useful for closed-form checks."""
    return ModelSpec(ForcingSpec(T, fbar, forcing), PotentialSpec(S))


def pendulum(a: float = 1.0, T: float = 1.0, S: float = 1.0, forcing=(), fbar: float = 0.0) -> ModelSpec:
    """Pendulum force g(x) = -(a S / 2 pi) sin(2 pi x / S), normalized so that sup|g'| = a.

    With S = 2 pi this is the classical g(x) = -a sin x. The rest point x = 0
    is elliptic and x = S/2 is hyperbolic.
    """
    amp = a * S / (2 * math.pi)
    return ModelSpec(ForcingSpec(T, fbar, forcing), PotentialSpec(S, ((1, 0.0, -amp),)))
