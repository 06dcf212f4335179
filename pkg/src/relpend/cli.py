"""Command-line front end.

A run is described by a key=value config file naming a model and a command;
see README.md for the grammar and every command's parameters. Artifacts go to
the output directory together with manifest.json (content hashes).

Exit codes: 0 PASS, 1 FAIL, 2 error (with a JSON trailer on stderr).
"""

from __future__ import annotations

import argparse
import difflib
import hashlib
import io
import json
import math
import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConvergenceError, DomainError, InfeasibleError, IntegrationError
from .model import ModelSpec, format_model, free_model, parse_model, pendulum

# ---------------------------------------------------------------------------
# parameter schemas


@dataclass(frozen=True)
class Param:
    kind: str  # float, int, str, bool, floats, choice
    default: object
    doc: str
    lo: float | None = None
    hi: float | None = None
    lo_open: bool = False
    choices: tuple = ()


def _tol(default=1e-12):
    return Param("float", default, "integration tolerance", 1e-14, 1e-3)


def _N(default=None):
    return Param("int", default, "number of twist factors (default: smallest admissible)", 1, 10_000)


COMMON = {
    "model": Param("str", None, "model file path, or builtin:pendulum / builtin:free"),
    "command": Param("str", None, "command to run"),
    "model.a": Param("float", 1.0, "builtin pendulum: sup|g'| (g = -(a S / 2 pi) sin(2 pi x / S))", 0.0, None),
    "model.T": Param("float", 1.0, "builtin models: forcing period", 0.0, None, lo_open=True),
    "model.S": Param("float", 1.0, "builtin models: potential period", 0.0, None, lo_open=True),
    "model.fbar": Param("float", 0.0, "builtin models: forcing mean"),
    "model.f.harmonics": Param("str", "(1, 1.0, 0.0)", "builtin models: forcing harmonics (k, cos, sin), ..."),
}

COMMANDS: dict[str, dict[str, Param]] = {
    "simulate": {
        "system": Param("choice", "canonical", "system to integrate", choices=("canonical", "shifted", "scaled")),
        "delta": Param("float", 0.1, "scale parameter of the scaled system", 0.0, 0.5),
        "t0": Param("float", 0.0, "start time"),
        "t1": Param("float", 10.0, "end time"),
        "q0": Param("float", 0.0, "initial position (or u)"),
        "p0": Param("float", 0.75, "initial momentum (or v)"),
        "samples": Param("int", 101, "number of dense output samples", 2, 10**7),
        "jacobian": Param("bool", True, "also integrate the variational equations"),
        "tol": _tol(),
    },
    "poincare": {
        "q0": Param("float", 0.0, "initial position"),
        "p0": Param("float", 0.75, "initial momentum"),
        "n_iter": Param("int", 1000, "number of period-map iterates", 1, 10**8),
        "tol": _tol(),
    },
    "factor-check": {
        "N": _N(),
        "grid": Param("int", 41, "nodes per axis", 2, 10_000),
        "p_max": Param("float", 1000.0, "largest |P0| on the grid", 0.0, None, lo_open=True),
        "p_far": Param("float", 1e6, "momentum for the asymptotic increment check", 0.0, None, lo_open=True),
        "tol": _tol(),
    },
    "genfun-surface": {
        "N": _N(),
        "factor": Param("int", 0, "factor index", 0, 10_000),
        "n_theta": Param("int", 21, "theta nodes", 2, 10_000),
        "n_delta": Param("int", 21, "increment nodes", 2, 10_000),
        "tol": _tol(),
    },
    "mather": {
        "a": Param("int", 0, "winding (lift units)"),
        "b": Param("int", 1, "period (map iterates)", 1, 10**6),
        "N": _N(),
        "n_starts": Param("int", 4, "multistart count", 1, 1000),
        "stationarity_tol": Param("float", 1e-9, "stationarity residual target", 1e-14, 1e-3),
        "tol": _tol(),
    },
    "hull": {
        "a": Param("int", 0, "winding (lift units)"),
        "b": Param("int", 1, "period (map iterates)", 1, 10**6),
        "N": _N(),
        "grid": Param("int", 256, "samples per unit of xi", 2, 10**6),
        "n_starts": Param("int", 4, "multistart count", 1, 1000),
        "tol": _tol(),
    },
    "boundedness": {
        "p_min": Param("float", -20.0, "smallest initial momentum"),
        "p_max": Param("float", 20.0, "largest initial momentum"),
        "n_p": Param("int", 41, "number of initial momenta", 1, 10**6),
        "q0": Param("float", 0.0, "initial position"),
        "n_periods": Param("int", 10_000, "iterates per orbit", 1, 10**9),
        "bound": Param("float", 5.0, "excursion budget", 0.0, None, lo_open=True),
        "tol": _tol(1e-10),
    },
    "escape": {
        "p0": Param("floats", (0.0, 1.0, 2.0, 5.0, 10.0, 50.0), "initial momenta"),
        "q0": Param("float", 0.0, "initial position"),
        "n_iter": Param("int", 1000, "iterates per orbit", 2, 10**9),
        "tol": _tol(1e-10),
    },
    "subharmonic": {
        "a": Param("int", 1, "winding (lift units)"),
        "b": Param("int", 2, "period (map iterates)", 1, 10**6),
        "N": _N(),
        "tol": _tol(),
    },
    "quasiperiodic": {
        "omega": Param("str", "golden", "irrational rotation number, or 'golden' for (sqrt 5 - 1)/2"),
        "cap": Param("int", 34, "largest convergent denominator", 1, 10**6),
        "N": _N(),
        "tol": _tol(),
    },
    "expansion": {
        "deltas": Param("floats", (0.2, 0.1, 0.05, 0.025), "scale parameters, decreasing"),
        "n_u": Param("int", 32, "grid nodes in u", 32, 10**5),
        "n_v": Param("int", 32, "grid nodes in v", 32, 10**5),
        "tol": _tol(),
    },
    "moser-report": {
        "deltas": Param("floats", (0.1, 0.05), "scale parameters"),
        "n_u": Param("int", 32, "grid nodes in u", 32, 10**5),
        "n_v": Param("int", 32, "grid nodes in v", 32, 10**5),
        "tol": _tol(),
    },
}

ALIASES = {
    "boundedness_sweep": "boundedness",
    "boundedness-sweep": "boundedness",
    "escape_demo": "escape",
    "escape-demo": "escape",
    "subharmonic_demo": "subharmonic",
    "quasiperiodic_demo": "quasiperiodic",
    "expansion_remainder": "expansion",
    "factor_check": "factor-check",
    "genfun_surface": "genfun-surface",
    "moser_report": "moser-report",
    "moser_hypotheses_report": "moser-report",
    "poincare_map": "poincare",
    "integrate": "simulate",
    "minimize": "mather",
    "hull_functions": "hull",
}


def resolve_command(name: str) -> str:
    """Canonical command name, or ConfigError with a nearest-match suggestion."""
    if name in COMMANDS:
        return name
    if name in ALIASES:
        return ALIASES[name]
    pool = list(COMMANDS) + list(ALIASES)
    close = difflib.get_close_matches(name, pool, n=1, cutoff=0.5)
    hint = f"; did you mean {ALIASES.get(close[0], close[0])!r}?" if close else ""
    raise ConfigError([f"unknown command {name!r}{hint}"])


def list_commands(command: str | None = None) -> str:
    if command is None:
        lines = ["commands:"]
        for name, params in COMMANDS.items():
            lines.append(f"  {name:15s} {', '.join(params)}")
        lines.append("")
        lines.append("common keys: " + ", ".join(COMMON))
        lines.append("run 'relpend help <command>' for a command's parameters")
        return "\n".join(lines)
    name = resolve_command(command)
    lines = [f"{name}:"]
    for key, p in {**COMMANDS[name]}.items():
        rng = ""
        if p.lo is not None or p.hi is not None:
            lo = "(" if p.lo_open else "["
            rng = f" range {lo}{p.lo if p.lo is not None else '-inf'}, {p.hi if p.hi is not None else 'inf'}]"
        if p.choices:
            rng = f" one of {', '.join(p.choices)}"
        lines.append(f"  {key} ({p.kind}, default {p.default!r}){rng}: {p.doc}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# config parsing


@dataclass
class RunConfig:
    model: str
    command: str
    params: dict
    model_overrides: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"model": self.model, "command": self.command, "params": self.params,
                "model_overrides": self.model_overrides}


def _convert(key: str, p: Param, raw: str):
    """Returns (value, problem)."""
    try:
        if p.kind == "float":
            val = float(raw)
            if not math.isfinite(val):
                return None, f"{key} must be finite"
        elif p.kind == "int":
            val = int(raw)
        elif p.kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                return None, f"{key} must be a boolean"
            val = low in ("true", "1", "yes")
        elif p.kind == "floats":
            val = tuple(float(s) for s in raw.replace(",", " ").split())
            if not val:
                return None, f"{key} must be a non-empty list of numbers"
        elif p.kind == "choice":
            if raw not in p.choices:
                return None, f"{key} must be one of {', '.join(p.choices)}"
            val = raw
        else:
            val = raw
    except ValueError:
        return None, f"{key}: cannot parse {raw!r} as {p.kind}"
    vals = val if isinstance(val, tuple) else (val,)
    if p.kind in ("float", "int", "floats"):
        for v in vals:
            if p.lo is not None and (v < p.lo or (p.lo_open and v == p.lo)):
                op = ">" if p.lo_open else ">="
                return None, f"{key}={v!r} out of range: must be {op} {p.lo!r}"
            if p.hi is not None and v > p.hi:
                return None, f"{key}={v!r} out of range: must be <= {p.hi!r}"
    return val, None


def _line_of(msg: str) -> int:
    m = re.match(r"line (\d+):", msg)
    return int(m.group(1)) if m else 10**9


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse and validate a key=value config; every violation is reported."""
    problems: list[str] = []
    entries: dict[str, tuple[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key=value, got {raw.strip()!r}")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key in entries:
            problems.append(f"line {lineno}: duplicate key {key!r} (also on line {entries[key][0]})")
            continue
        entries[key] = (lineno, val)

    cmd = None
    cmd_raw = entries.get("command", (None, command))[1] if command is None else command
    if "command" in entries and command is not None and entries["command"][1] != command:
        problems.append(f"line {entries['command'][0]}: command {entries['command'][1]!r} conflicts "
                        f"with command {command!r} given on the command line")
    if cmd_raw is None:
        problems.append("missing required key 'command'")
    else:
        try:
            cmd = resolve_command(cmd_raw)
        except ConfigError as exc:
            where = f"line {entries['command'][0]}: " if "command" in entries else ""
            problems.extend(where + v for v in exc.violations)
    if "model" not in entries:
        problems.append("missing required key 'model'")

    schema = COMMANDS.get(cmd, {})
    params, overrides = {}, {}
    for key, (lineno, raw) in entries.items():
        if key in ("command", "model"):
            continue
        p = COMMON.get(key) or schema.get(key)
        if p is None and cmd is None:
            # without a valid command, still check values of keys some command knows
            p = next((sch[key] for sch in COMMANDS.values() if key in sch), None)
            if p is None:
                continue
        if p is None:
            allowed = sorted(set(schema) | set(COMMON))
            close = difflib.get_close_matches(key, allowed, n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            problems.append(f"line {lineno}: unknown key {key!r} for command {cmd!r}{hint}")
            continue
        val, err = _convert(key, p, raw)
        if err:
            problems.append(f"line {lineno}: {err}")
        elif key.startswith("model."):
            overrides[key[6:]] = val
        else:
            params[key] = val

    model = entries.get("model", (0, ""))[1]
    if overrides and model and not model.startswith("builtin:"):
        problems.append("model.* keys only apply to builtin models")
    if model.startswith("builtin:") and model not in ("builtin:pendulum", "builtin:free"):
        problems.append(f"line {entries['model'][0]}: unknown builtin model {model!r} "
                        "(available: builtin:pendulum, builtin:free)")
    if problems:
        raise ConfigError(sorted(problems, key=_line_of))
    full = {k: p.default for k, p in schema.items()}
    full.update(params)
    return RunConfig(model, cmd, full, overrides)


def load_model(cfg: RunConfig, base_dir: Path | None = None) -> ModelSpec:
    o = cfg.model_overrides
    if cfg.model.startswith("builtin:"):
        from .model import _parse_harmonics

        harm = _parse_harmonics(o.get("f.harmonics", COMMON["model.f.harmonics"].default))
        T = o.get("T", 1.0)
        S = o.get("S", 1.0)
        fbar = o.get("fbar", 0.0)
        if cfg.model == "builtin:free":
            return free_model(T, fbar, harm, S)
        return pendulum(o.get("a", 1.0), T, S, harm, fbar)
    path = Path(cfg.model)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read model file {str(path)!r}: {exc.strerror}"]) from None
    try:
        return parse_model(text)
    except ValueError as exc:
        raise ConfigError([f"model file {str(path)!r}: {line}" for line in str(exc).splitlines()]) from None


# ---------------------------------------------------------------------------
# commands; each returns (verdict: bool, artifacts: dict name -> text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(str(x) if isinstance(x, (int, np.integer)) and not isinstance(x, bool)
                           else repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, Fraction):
            return str(o)
        raise TypeError(type(o))

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def _factor_count(spec, N):
    from .experiments import default_factor_count

    return default_factor_count(spec) if N is None else N


def cmd_simulate(spec, P, seed):
    from .flow import System, admissible_delta, integrate

    system = {"canonical": System.CANONICAL, "shifted": System.SHIFTED, "scaled": System.SCALED}[P["system"]]
    delta = None
    if system is System.SCALED:
        bound = admissible_delta(spec)
        if not 0 <= P["delta"] <= bound:
            raise DomainError(f"delta must lie in [0, {bound!r}]")
        delta = P["delta"]
    ts = np.linspace(P["t0"], P["t1"], P["samples"])
    res = integrate(system, spec, P["t0"], P["t1"], (P["q0"], P["p0"]), P["tol"], delta=delta,
                    jacobian=P["jacobian"], t_eval=ts)
    report = res.summary()
    ok = True
    if P["jacobian"] and system is not System.SCALED:
        report["area_preserving"] = abs(res.det - 1) < 1e-8
        ok = report["area_preserving"] if P["tol"] <= 1e-12 else True
    report["verdict"] = "PASS" if ok else "FAIL"
    return ok, {"trajectory.csv": res.to_csv(), "report.json": _json(report)}


def cmd_poincare(spec, P, seed):
    from .experiments import iterate_map
    from .mather import rotation_from_lifts
    from .poincare import poincare_map

    status, done, qs, ps = iterate_map(spec, P["q0"], P["p0"], P["n_iter"], P["tol"])
    if status[0] != 0:
        raise IntegrationError("period map iteration failed", float(done[0]) * spec.T)
    _, J = poincare_map(spec, (P["q0"], P["p0"]), P["tol"])
    det = float(np.linalg.det(J))
    report = {"n_iter": P["n_iter"], "det_minus_one_first_iterate": det - 1,
              "final": [float(qs[0, -1]), float(ps[0, -1])]}
    if P["n_iter"] >= 1000:
        est, err, naive = rotation_from_lifts(qs[0])
        report["rotation_number"] = {"weighted": est, "error": err, "naive": naive}
    ok = abs(det - 1) < 1e-8 or P["tol"] > 1e-12
    report["verdict"] = "PASS" if ok else "FAIL"
    rows = [(n, q, p) for n, (q, p) in enumerate(zip(qs[0], ps[0]))]
    return ok, {"orbit.csv": _csv(("n", "q", "p"), rows), "report.json": _json(report)}


def cmd_factor_check(spec, P, seed):
    from .poincare import compose_factors, factor_chain

    N = _factor_count(spec, P["N"])
    factors = factor_chain(spec, N, P["tol"])
    n = P["grid"]
    Qs = np.linspace(0.0, spec.S, n, endpoint=False)
    Ps = P["p_max"] * np.linspace(-1.0, 1.0, n) ** 3
    rows = []
    min_twist = math.inf
    violations = 0
    for k, fac in enumerate(factors):
        M = fac.momentum_bound
        for Q in Qs:
            for P0 in Ps:
                z, J, _ = fac.evaluate(Q, P0, jacobian=True)
                min_twist = min(min_twist, J[0, 1])
                dP = abs(z[1] - P0)
                violations += dP > M
                rows.append((k, Q, P0, z[0], z[1], J[0, 1], dP))
    far = []
    for fac in factors:
        for sgn in (1.0, -1.0):
            z = fac(0.0, sgn * P["p_far"])
            far.append(abs(z[0] - sgn * fac.L))
    comp = compose_factors(spec, N, tol=P["tol"])
    report = {
        "N": N, "L": spec.T / N, "twist_bound": spec.potential.twist_length_bound(),
        "min_twist": min_twist, "momentum_bound": factors[0].momentum_bound,
        "momentum_violations": int(violations), "asymptotic_increment_error": max(far),
        "composition": comp.as_dict(),
    }
    ok = min_twist > 0 and violations == 0 and max(far) < 1e-3 and comp.max_discrepancy <= 1e-8
    report["verdict"] = "PASS" if ok else "FAIL"
    csv = _csv(("factor", "Q0", "P0", "Q1", "P1", "dQ1_dP0", "abs_dP"), rows)
    return ok, {"factor_check.csv": csv, "report.json": _json(report)}


def cmd_genfun_surface(spec, P, seed):
    from .genfun import GeneratingFunction
    from .poincare import factor_chain

    N = _factor_count(spec, P["N"])
    factors = factor_chain(spec, N, P["tol"])
    if not 0 <= P["factor"] < N:
        raise DomainError(f"factor index must lie in [0, {N - 1}]")
    gf = GeneratingFunction(factors[P["factor"]])
    lo, hi = gf.band
    thetas = np.linspace(0.0, spec.S, P["n_theta"], endpoint=False)
    deltas = np.linspace(0.9 * lo, 0.9 * hi, P["n_delta"])
    diag = gf.legendre_diagnostic(thetas, deltas)
    report = {k: v for k, v in diag.items() if k != "nodes"}
    report.update({"N": N, "factor": P["factor"], "L": gf.L, "band": [lo, hi]})
    ok = diag["all_negative"] and diag["consistent"]
    report["verdict"] = "PASS" if ok else "FAIL"
    return ok, {"surface.csv": gf.surface_csv(thetas, deltas), "report.json": _json(report)}


def _mather_orbit(spec, P, seed, n_starts=4, stat_tol=1e-9):
    from .mather import MinimizeOptions, generating_functions, minimize

    N = _factor_count(spec, P["N"])
    gfs = generating_functions(spec, N, P["tol"])
    opts = MinimizeOptions(tol=stat_tol, n_starts=n_starts, seed=seed)
    return gfs, minimize(gfs, P["a"], P["b"], opts=opts)


def cmd_mather(spec, P, seed):
    from .mather import check_rotation, comparability, orbit_rotation_number, reconstruct_orbit

    check_rotation(spec, P["a"], P["b"])
    gfs, orbit = _mather_orbit(spec, P, seed, P["n_starts"], P["stationarity_tol"])
    recon = reconstruct_orbit(gfs, orbit)
    translates = [(p, q) for p in (-1, 0, 1) for q in range(0, orbit.b + 1)]
    comp = comparability(orbit, translates)
    rot = orbit_rotation_number(gfs, orbit)
    report = orbit.summary()
    report.update({
        "reconstruction": recon.as_dict(),
        "comparability": {f"{p},{q}": v if isinstance(v, str) else f"crossing at {v[1]}" for (p, q), v in comp.items()},
        "rotation_number": {"weighted": rot.omega, "error": rot.error, "naive": rot.naive},
    })
    ok = (orbit.residual < 1e-7 and recon.passed and orbit.flags["translates_ordered"]
          and abs(rot.omega - orbit.a * orbit.S / orbit.b) < 1e-8)
    report["verdict"] = "PASS" if ok else "FAIL"
    return ok, {"orbit.csv": orbit.to_csv(), "report.json": _json(report)}


def cmd_hull(spec, P, seed):
    from .mather import check_rotation, hull_functions

    check_rotation(spec, P["a"], P["b"])
    if math.gcd(P["a"], P["b"]) != 1:
        raise DomainError("a and b must be coprime")
    gfs, orbit = _mather_orbit(spec, P, seed, P["n_starts"])
    hull = hull_functions(gfs, orbit, P["grid"])
    report = {"orbit": orbit.summary(), "certificates": hull.certificates, "omega": str(hull.omega)}
    ok = bool(hull.certificates["passed"])
    report["verdict"] = "PASS" if ok else "FAIL"
    return ok, {"hull.csv": hull.to_csv(), "orbit.csv": orbit.to_csv(), "report.json": _json(report)}


def cmd_boundedness(spec, P, seed):
    from .experiments import boundedness_sweep

    grid = np.linspace(P["p_min"], P["p_max"], P["n_p"])
    rep = boundedness_sweep(spec, grid, P["n_periods"], P["q0"], P["bound"], P["tol"])
    return rep.passed, {"sweep.csv": rep.to_csv(), "report.json": _json(rep.as_dict())}


def cmd_escape(spec, P, seed):
    from .experiments import escape_demo

    rep = escape_demo(spec, P["p0"], P["n_iter"], P["q0"], P["tol"])
    d = rep.as_dict()
    top = d["orbits"][-1]
    slope_ok = abs(top["slope"] - spec.T * spec.forcing.mean) <= 0.05 * abs(spec.T * spec.forcing.mean)
    g = rep.gamma_check
    gamma_ok = abs(g["gamma_quadrature"] - g["gamma_direct"]) < 1e-6
    ok = rep.threshold is not None and slope_ok and gamma_ok
    d["verdict"] = "PASS" if ok else "FAIL"
    return ok, {"escape.csv": rep.to_csv(), "report.json": _json(d)}


def cmd_subharmonic(spec, P, seed):
    from .experiments import subharmonic_demo
    from .mather import MinimizeOptions

    cert = subharmonic_demo(spec, P["a"], P["b"], P["N"], MinimizeOptions(seed=seed), P["tol"])
    rows = [(t, q, p) for t, (q, p) in zip(cert.times, cert.samples)]
    return cert.passed, {
        "trajectory.csv": _csv(("t", "Q", "P"), rows),
        "orbit.csv": cert.orbit.to_csv(),
        "report.json": _json(cert.as_dict()),
    }


def cmd_quasiperiodic(spec, P, seed):
    from .experiments import quasiperiodic_demo
    from .mather import MinimizeOptions

    raw = P["omega"]
    if raw == "golden":
        omega = (math.sqrt(5.0) - 1.0) / 2.0
    else:
        try:
            omega = Fraction(raw) if "/" in raw else float(raw)
        except ValueError:
            raise DomainError(f"cannot parse omega={raw!r}") from None
    rep = quasiperiodic_demo(spec, omega, P["cap"], P["N"], MinimizeOptions(seed=seed), P["tol"])
    rows = [(r["a"], r["b"], r["action"], r["residual"], r["slope"], r["slope_error"])
            for r in rep["convergents"] if "slope" in r]
    ok = rep["monotone"] and rep["within_gap"] and bool(rows)
    rep["verdict"] = "PASS" if ok else "FAIL"
    return ok, {"convergents.csv": _csv(("a", "b", "action", "residual", "slope", "slope_error"), rows),
                "report.json": _json(rep)}


def cmd_expansion(spec, P, seed):
    from .flow import expansion_remainder

    reports = [expansion_remainder(spec, d, P["n_u"], P["n_v"], P["tol"]) for d in P["deltas"]]
    rows = []
    for rep in reports:
        for i, u in enumerate(rep.u_grid):
            for j, v in enumerate(rep.v_grid):
                rows.append((rep.delta, u, v, rep.R1[i, j], rep.R2[i, j]))
    sups = [r.sup_norm for r in reports]
    ratios = [b / a for a, b in zip(sups, sups[1:])]
    ok = all(r < 1 for r in ratios) and all(r <= 0.75 for r in ratios)
    report = {"levels": [r.as_dict() for r in reports], "ratios": ratios, "verdict": "PASS" if ok else "FAIL"}
    return ok, {"remainder.csv": _csv(("delta", "u", "v", "R1", "R2"), rows), "report.json": _json(report)}


def cmd_moser_report(spec, P, seed):
    from .poincare import moser_hypotheses_report

    rep = moser_hypotheses_report(spec, P["deltas"], P["n_u"], P["n_v"], P["tol"])
    rep["verdict"] = "PASS"
    return True, {"report.json": _json(rep)}


HANDLERS = {
    "simulate": cmd_simulate,
    "poincare": cmd_poincare,
    "factor-check": cmd_factor_check,
    "genfun-surface": cmd_genfun_surface,
    "mather": cmd_mather,
    "hull": cmd_hull,
    "boundedness": cmd_boundedness,
    "escape": cmd_escape,
    "subharmonic": cmd_subharmonic,
    "quasiperiodic": cmd_quasiperiodic,
    "expansion": cmd_expansion,
    "moser-report": cmd_moser_report,
}


def write_artifacts(out_dir: Path, artifacts: dict, meta: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(artifacts):
        data = artifacts[name].encode()
        (out_dir / name).write_bytes(data)
        entries.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    manifest = dict(meta)
    manifest["artifacts"] = entries
    path = out_dir / "manifest.json"
    path.write_text(_json(manifest))
    return path


def _error_trailer(exc: BaseException) -> str:
    info = {"status": "error", "exit_code": 2, "error_type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        info["violations"] = exc.violations
    if isinstance(exc, IntegrationError):
        info["last_time"] = exc.last_time
    if isinstance(exc, ConvergenceError):
        info["best_residual"] = exc.best_residual
    return json.dumps(info, sort_keys=True)


def run(config: RunConfig, out_dir: Path | str = "relpend-out", seed: int | None = None,
        base_dir: Path | None = None, stderr=None) -> int:
    """Execute a parsed config; returns the exit code."""
    stderr = sys.stderr if stderr is None else stderr
    try:
        spec = load_model(config, base_dir)
        ok, artifacts = HANDLERS[config.command](spec, config.params, seed)
        artifacts["model.txt"] = format_model(spec)
        meta = {"command": config.command, "config": config.as_dict(), "seed": seed,
                "verdict": "PASS" if ok else "FAIL"}
        write_artifacts(Path(out_dir), artifacts, meta)
        return 0 if ok else 1
    except (ConfigError, DomainError, IntegrationError, ConvergenceError, InfeasibleError, ValueError) as exc:
        print(f"error: {exc}", file=stderr)
        print(_error_trailer(exc), file=stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="relpend",
        description="Forced relativistic pendulum: flows, twist maps, minimal orbits.",
        epilog=list_commands(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ap.add_argument("command", nargs="?", help="command to run, or 'help' / 'list'")
    ap.add_argument("topic", nargs="?", help="with 'help': the command to describe")
    ap.add_argument("--config", type=Path, help="key=value run configuration")
    ap.add_argument("--out", type=Path, default=Path("relpend-out"), help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="worker threads for parallel sweeps")
    ap.add_argument("--seed", type=int, default=None, help="seed for multistart ordering")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command in ("help", "list"):
            print(list_commands(args.topic))
            return 0
        if args.config is None:
            if args.command is None:
                ap.print_help()
                return 0
            print(list_commands(args.command))
            return 0
        if args.threads is not None:
            import numba

            numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError([f"cannot read config {str(args.config)!r}: {exc.strerror}"]) from None
        cfg = parse_config(text, args.command)
    except ConfigError as exc:
        print("error: invalid configuration", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        print(_error_trailer(exc), file=sys.stderr)
        return 2
    return run(cfg, args.out, args.seed, args.config.parent)


if __name__ == "__main__":
    sys.exit(main())
