"""Command-line front end.

Exit codes: 0 when the checked property holds, 1 when it is violated,
2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    ensemble_cost,
    monte_carlo_cost,
    monte_carlo_density_check,
    verify_duality,
    verify_estimate,
    write_schedule_csv,
)
from .flow import EscapeError
from .optimality import check_maximum_condition, needle_derivative_fd, write_hamiltonian_csv
from .optimizer import OptimizerOptions, solve, write_control_csv
from .problem import ConfigError, ControlSignal, Problem, control_from_dict, load_problem, validate_problem
from .reporting import jsonable, write_json

EXIT_OK, EXIT_VIOLATED, EXIT_USAGE = 0, 1, 2

NOISE_FLOOR = 1e-3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ensemble-oc", description="Verification and optimization for controlled ODE ensembles.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--problem", required=True, help="catalog name or JSON config path")
    common.add_argument("--s", type=float, default=0.0, help="start time (mesh point)")
    common.add_argument("--N", type=_positive_int, default=None, help="Monte Carlo sample count")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=_positive_float, default=None)
    common.add_argument("--out", type=Path, default=None, help="directory for report files")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker cap (computation is single-process)")
    common.add_argument("--control", default=None, help="JSON control file, or comma-separated constant value")

    sub.add_parser("validate", parents=[common], help="sampled checks of the standing assumptions")
    v = sub.add_parser("verify", parents=[common], help="duality, estimate or density check")
    v.add_argument("--which", choices=["duality", "estimate", "density"], default="duality")
    v.add_argument("--checkpoints", type=_floats, default=None)
    sub.add_parser("cost", parents=[common], help="grid and Monte Carlo cost")
    sub.add_parser("check", parents=[common], help="grid scan of the maximum condition")
    n = sub.add_parser("needle", parents=[common], help="needle-variation finite differences")
    n.add_argument("--tbar", type=float, default=None)
    n.add_argument("--ubar", type=_floats, default=None)
    n.add_argument("--eps", type=_floats, default=None)
    o = sub.add_parser("optimize", parents=[common], help="successive approximation")
    o.add_argument("--mode", choices=["ordinary", "relaxed"], default="relaxed")
    o.add_argument("--max-iters", type=_positive_int, default=20)
    o.add_argument("--beta0", type=float, default=1.0)
    return ap


def _control(p: Problem, args, raw: dict):
    if args.control is not None:
        path = Path(args.control)
        if path.suffix == ".json" or path.exists():
            try:
                d = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read control {args.control}: {exc}") from exc
            return control_from_dict(d, p)
        try:
            value = [float(v) for v in args.control.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad control value {args.control!r}") from exc
        return control_from_dict({"kind": "constant", "value": value}, p)
    if "control" in raw:
        return control_from_dict(raw["control"], p)
    return ControlSignal.constant(p)


def _emit(args, name: str, payload: dict) -> None:
    text = json.dumps(jsonable(payload), indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        write_json(payload, args.out / f"{name}.json")


def cmd_validate(p, u, args, raw) -> int:
    rep = validate_problem(p, seed=args.seed)
    _emit(args, "validate", {"problem": p.name, "report": rep})
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_VIOLATED


def cmd_verify(p, u, args, raw) -> int:
    if args.which == "duality":
        rep = verify_duality(p, u, args.s)
        tol = args.tol or 1e-2
        ok = rep.rel_gap <= tol
    elif args.which == "estimate":
        rep = verify_estimate(p, u, args.s, rel_tol=args.tol or 1e-3)
        ok = rep.satisfied
        tol = rep.tol_report
        if args.out is not None:
            write_schedule_csv(rep, args.out / "estimate_schedule.csv")
    else:
        rep = monte_carlo_density_check(p, u, N=args.N or 100_000, seed=args.seed, checkpoints=args.checkpoints)
        tol = args.tol or 5e-2
        ok = max(rep.tv) <= tol
    _emit(args, f"verify_{args.which}", {"problem": p.name, "which": args.which, "tol": tol, "holds": ok, "report": rep})
    return EXIT_OK if ok else EXIT_VIOLATED


def cmd_cost(p, u, args, raw) -> int:
    grid_cost = ensemble_cost(p, u)
    mc = monte_carlo_cost(p, u, N=args.N or 100_000, seed=args.seed)
    slack = 3 * mc.std_error + (args.tol if args.tol is not None else 2e-2)
    agree = abs(grid_cost - mc.estimate) <= slack
    _emit(args, "cost", {"problem": p.name, "ensemble_cost": grid_cost, "monte_carlo": mc, "allowed": slack, "agree": agree})
    return EXIT_OK if agree else EXIT_VIOLATED


def cmd_check(p, u, args, raw) -> int:
    rep = check_maximum_condition(p, u, tol=args.tol or 1e-2)
    if args.out is not None:
        write_hamiltonian_csv(rep, args.out / "hamiltonian.csv")
    _emit(args, "check", {"problem": p.name, "report": rep})
    return EXIT_OK if rep.satisfied else EXIT_VIOLATED


def cmd_needle(p, u, args, raw) -> int:
    tbar = args.tbar if args.tbar is not None else 0.25 * p.T
    ubar = args.ubar if args.ubar is not None else list(p.delta.default_point())
    if len(ubar) != p.m or not p.delta.contains(ubar):
        raise ConfigError(f"ubar {ubar} is not a point of Delta")
    eps = args.eps or [p.dt * 2**k for k in (3, 2, 1, 0)]
    try:
        nc = needle_derivative_fd(p, u, tbar, ubar, eps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tol = args.tol or 5e-2
    err = nc.errors
    monotone = all(b <= a + NOISE_FLOOR for a, b in zip(err, err[1:]))
    ok = err[-1] <= tol and monotone
    _emit(args, "needle", {"problem": p.name, "tol": tol, "monotone": monotone, "holds": ok, "report": nc})
    return EXIT_OK if ok else EXIT_VIOLATED


def cmd_optimize(p, u, args, raw) -> int:
    opts = OptimizerOptions(max_iters=args.max_iters, tol=args.tol or 1e-2, beta0=args.beta0, mode=args.mode)
    trace = solve(p, u, opts)
    if args.out is not None:
        write_control_csv(p, trace.control, args.out / "control.csv")
    _emit(args, "optimize", {"problem": p.name, "trace": trace})
    return EXIT_OK if trace.converged else EXIT_VIOLATED


COMMANDS = {
    "validate": cmd_validate,
    "verify": cmd_verify,
    "cost": cmd_cost,
    "check": cmd_check,
    "needle": cmd_needle,
    "optimize": cmd_optimize,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        p, raw = load_problem(args.problem)
        u = _control(p, args, raw)
        p.time_index(args.s)
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
        with np.errstate(all="ignore"):
            return COMMANDS[args.command](p, u, args, raw)
    except (ConfigError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, EscapeError) as exc:
        # off-mesh times, trajectories leaving the safety box
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
