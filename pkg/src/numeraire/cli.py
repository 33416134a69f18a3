"""Command-line entry point: validate | nuip | solve | verify | simulate |
demo {bessel,upbr}.

Exit codes: 0 pass, 2 mathematical failure (UIP found when solving,
certificate failure, non-integrable numeraire, failed demo verdict),
1 usage or I/O error.  A JSON report is always written on 0/2.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import simulation
from .arbitrage import LpFailureError, detect_uip
from .constraints import (ConstraintSet, InfeasibleConstraintsError,
                          PRESETS, constraints_from_json)
from .market import MarketSpec, drift_rate, load_market, validate_market
from .solver import (InvalidMarketError, LadderNonconvergenceError,
                     NonconvergenceError, SolverOptions, UipFoundError,
                     solve_numeraire, verify_solution)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MATH = 2

SCHEMA = "numeraire-report/1"

# user-overridable tolerances and their SolverOptions fields
_TOL_KEYS = {"pg_tol", "ladder_tol", "cert_tol", "domain_floor"}


class _UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# deterministic JSON emission (17 significant digits, stable order)


def _fmt(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return '"nan"'
        if math.isinf(v):
            return '"inf"' if v > 0 else '"-inf"'
        return format(v, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        items = list(value.tolist() if isinstance(value, np.ndarray) else value)
        return "[" + ",".join(_fmt(v) for v in items) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_fmt(v)}"
                              for k, v in value.items()) + "}"
    raise TypeError(f"cannot serialize {type(value)!r}")


def emit_report(result: dict) -> str:
    """Versioned report document; emission is byte-deterministic."""
    doc = {"schema": SCHEMA}
    doc.update(result)
    return _fmt(doc) + "\n"


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    command: str
    spec: str | None = None
    constraints: str = "unconstrained"
    seed: int = 0
    n_paths: int | None = None
    out: str | None = None
    tol_overrides: dict = field(default_factory=dict)
    steps: int = 4000
    levels: tuple = (2, 4, 8, 16)
    csv: str | None = None


def _parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise _UsageError(f"--tol-override expects K=V, got {pair!r}")
        key, _, val = pair.partition("=")
        if key not in _TOL_KEYS:
            raise _UsageError(
                f"unknown tolerance {key!r}; allowed: {sorted(_TOL_KEYS)}")
        try:
            v = float(val)
        except ValueError:
            raise _UsageError(f"tolerance {key} needs a number, got {val!r}")
        if not 1e-14 <= v <= 1e-2:
            raise _UsageError(f"tolerance {key}={v} outside [1e-14, 1e-2]")
        out[key] = v
    return out


def _solver_options(cfg: RunConfig) -> SolverOptions:
    opts = SolverOptions()
    over = {k: v for k, v in cfg.tol_overrides.items() if k != "cert_tol"}
    return replace(opts, **over) if over else opts


def _load_constraints(cfg: RunConfig, d: int) -> ConstraintSet:
    name = cfg.constraints
    if name in PRESETS:
        return ConstraintSet.from_preset(name, d)
    with open(name, "r", encoding="utf-8") as fh:
        cs = constraints_from_json(fh.read())
    if cs.d != d:
        raise _UsageError(
            f"constraints have dimension {cs.d}, market has {d}")
    return cs


def _load_spec(cfg: RunConfig) -> MarketSpec:
    if not cfg.spec:
        raise _UsageError("this command requires --spec")
    return load_market(cfg.spec)


# --------------------------------------------------------------------------
# subcommands (each returns (exit_code, result dict))


def _cmd_validate(cfg: RunConfig):
    m = _load_spec(cfg)
    rep = validate_market(m)
    result = {
        "command": "validate",
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                   for c in rep.checks],
        "integrates_log": rep.integrates_log,
        "ok": rep.ok,
    }
    return (EXIT_OK if rep.ok else EXIT_MATH), result


def _cmd_nuip(cfg: RunConfig):
    m = _load_spec(cfg)
    cs = _load_constraints(cfg, m.d)
    segments = []
    any_uip = False
    for seg in m.segments:
        rep = detect_uip(seg.triplet, cs)
        any_uip = any_uip or rep.uip_exists
        segments.append(rep.to_dict())
    result = {"command": "nuip", "uip_exists": any_uip, "segments": segments}
    return (EXIT_MATH if any_uip else EXIT_OK), result


def _cmd_solve(cfg: RunConfig):
    m = _load_spec(cfg)
    cs = _load_constraints(cfg, m.d)
    opts = _solver_options(cfg)
    try:
        sol = solve_numeraire(m, cs, opts)
    except UipFoundError as exc:
        result = {"command": "solve", "error": "uip",
                  "segment": exc.segment_index,
                  "report": exc.report.to_dict()}
        return EXIT_MATH, result
    except LadderNonconvergenceError as exc:
        result = {"command": "solve", "error": "ladder_nonconvergence",
                  "trace": [{"n": n, "rho": r.tolist()} for n, r in exc.trace]}
        return EXIT_MATH, result
    result = {"command": "solve"}
    result.update(sol.to_dict())
    return (EXIT_OK if sol.integrable else EXIT_MATH), result


def _cmd_verify(cfg: RunConfig):
    m = _load_spec(cfg)
    cs = _load_constraints(cfg, m.d)
    opts = _solver_options(cfg)
    tol = cfg.tol_overrides.get("cert_tol", 1e-7)
    try:
        sol = solve_numeraire(m, cs, opts)
    except UipFoundError as exc:
        result = {"command": "verify", "error": "uip",
                  "segment": exc.segment_index,
                  "report": exc.report.to_dict()}
        return EXIT_MATH, result
    except LadderNonconvergenceError as exc:
        result = {"command": "verify", "error": "ladder_nonconvergence",
                  "trace": [{"n": n, "rho": r.tolist()} for n, r in exc.trace]}
        return EXIT_MATH, result
    n_dirs = cfg.n_paths if cfg.n_paths else 64
    cert = verify_solution(sol, m, cs, n_dirs=n_dirs, tol=tol)
    result = {
        "command": "verify",
        "max_rel": cert.max_rel,
        "per_segment": list(cert.per_segment),
        "n_evaluated": cert.n_evaluated,
        "tol": cert.tol,
        "passed": cert.passed,
        "integrable": sol.integrable,
    }
    return (EXIT_OK if cert.passed else EXIT_MATH), result


def _cmd_simulate(cfg: RunConfig):
    m = _load_spec(cfg)
    n_paths = cfg.n_paths or 1000
    bundle = simulation.simulate_paths(m, n_paths, cfg.seed)
    dg = m.effective_increments
    horizon_mass = float(dg.sum())
    seg_stats = []
    for i, (seg, counts) in enumerate(zip(m.segments, bundle.jump_counts)):
        t = seg.triplet
        mean_dx = bundle.increments[:, seg.from_idx:seg.to_idx, :].mean(
            axis=(0, 1))
        dr = drift_rate(t)
        seg_stats.append({
            "segment": i,
            "mean_increment": mean_dx.tolist(),
            "drift_rate": None if dr is None else dr.tolist(),
            "jump_counts_mean": counts.mean(axis=(0, 1)).tolist()
            if counts.size else [],
        })
    result = {
        "command": "simulate",
        "n_paths": n_paths,
        "seed": cfg.seed,
        "n_steps": bundle.n_steps,
        "clock_mass": horizon_mass,
        "segments": seg_stats,
    }
    if cfg.csv:
        _write_csv(cfg.csv, m, bundle)
        result["csv"] = cfg.csv
    return EXIT_OK, result


def _write_csv(path: str, m: MarketSpec, bundle) -> None:
    """Path dump: path, step, time, dX components, and W^rho when solvable."""
    w = None
    try:
        sol = solve_numeraire(m, ConstraintSet.full_space(m.d))
        w = simulation.wealth_from_increments(
            sol.rho_per_interval(), bundle, on_bankrupt="mark").values
    except (UipFoundError, LadderNonconvergenceError, NonconvergenceError):
        pass
    d = m.d
    header = ["path", "step", "time"] + [f"dX{i}" for i in range(d)]
    if w is not None:
        header.append("W")
    times = m.clock.times
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for p in range(bundle.n_paths):
            for k in range(bundle.n_steps):
                row = [str(p), str(k), format(float(times[k + 1]), ".17g")]
                row += [format(float(v), ".17g")
                        for v in bundle.increments[p, k]]
                if w is not None:
                    row.append(format(float(w[p, k + 1]), ".17g"))
                fh.write(",".join(row) + "\n")


def _cmd_demo_bessel(cfg: RunConfig):
    n_paths = cfg.n_paths or 200
    rep = simulation.bessel_arbitrage_demo(cfg.steps, n_paths, cfg.seed)
    result = {"command": "demo bessel", "seed": cfg.seed}
    result.update(rep.to_dict())
    return (EXIT_OK if rep.wealth_positive else EXIT_MATH), result


def _cmd_demo_upbr(cfg: RunConfig):
    m = _load_spec(cfg)
    n_paths = cfg.n_paths or 2000
    try:
        rep = simulation.upbr_demo(m, cfg.levels, n_paths, cfg.seed)
    except ValueError as exc:
        return EXIT_MATH, {"command": "demo upbr", "error": str(exc)}
    except UipFoundError as exc:
        return EXIT_MATH, {"command": "demo upbr", "error": "uip",
                           "segment": exc.segment_index,
                           "report": exc.report.to_dict()}
    result = {"command": "demo upbr", "seed": cfg.seed}
    result.update(rep.to_dict())
    return (EXIT_OK if rep.passed else EXIT_MATH), result


_COMMANDS = {
    "validate": _cmd_validate,
    "nuip": _cmd_nuip,
    "solve": _cmd_solve,
    "verify": _cmd_verify,
    "simulate": _cmd_simulate,
    "demo bessel": _cmd_demo_bessel,
    "demo upbr": _cmd_demo_upbr,
}


def run(cfg: RunConfig) -> tuple[int, dict | None]:
    """Execute a configuration; returns (exit_code, report dict or None)."""
    handler = _COMMANDS.get(cfg.command)
    if handler is None:
        raise _UsageError(f"unknown command {cfg.command!r}")
    return handler(cfg)


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="numeraire", add_help=True)
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--spec", help="market spec JSON path")
        sp.add_argument("--constraints", default="unconstrained",
                        help="preset name or constraints JSON path")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--paths", type=int, default=None)
        sp.add_argument("--out", help="report path (default stdout)")
        sp.add_argument("--tol-override", action="append", default=[],
                        metavar="K=V")

    for name in ("validate", "nuip", "solve", "verify", "simulate"):
        sp = sub.add_parser(name)
        common(sp)
        if name == "simulate":
            sp.add_argument("--csv", help="optional CSV path dump")
    demo = sub.add_parser("demo")
    demo_sub = demo.add_subparsers(dest="which")
    for which in ("bessel", "upbr"):
        sp = demo_sub.add_parser(which)
        common(sp)
        if which == "bessel":
            sp.add_argument("--steps", type=int, default=4000)
        else:
            sp.add_argument("--levels", default="2,4,8,16",
                            help="comma-separated truncation levels")
    return p


def _config_from_args(args) -> RunConfig:
    command = args.command
    if command == "demo":
        which = getattr(args, "which", None)
        if which not in ("bessel", "upbr"):
            raise _UsageError("demo requires a target: bessel or upbr")
        command = f"demo {which}"
    if command is None:
        raise _UsageError("a command is required")
    levels = (2, 4, 8, 16)
    if hasattr(args, "levels"):
        try:
            levels = tuple(int(v) for v in str(args.levels).split(","))
        except ValueError:
            raise _UsageError(f"bad --levels value {args.levels!r}")
    return RunConfig(
        command=command,
        spec=getattr(args, "spec", None),
        constraints=getattr(args, "constraints", "unconstrained"),
        seed=getattr(args, "seed", 0),
        n_paths=getattr(args, "paths", None),
        out=getattr(args, "out", None),
        tol_overrides=_parse_overrides(getattr(args, "tol_override", [])),
        steps=getattr(args, "steps", 4000),
        levels=levels,
        csv=getattr(args, "csv", None),
    )


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = _config_from_args(args)
        code, result = run(cfg)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"cannot open {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"malformed JSON at line {exc.lineno} column {exc.colno}: "
              f"{exc.msg}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, InvalidMarketError,
            InfeasibleConstraintsError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LpFailureError, NonconvergenceError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if result is not None:
        text = emit_report(result)
        if cfg.out:
            with open(cfg.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
