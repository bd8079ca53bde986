"""Run the optimizer, project the relaxed result, and compare costs.

    python scripts/optimize_and_project.py --problem bang1d --beta0 0.5
"""

import argparse
from pathlib import Path

from ensemble_oc.analysis import ensemble_cost
from ensemble_oc.optimizer import OptimizerOptions, project_relaxed_to_ordinary, solve, write_control_csv, write_trace_json
from ensemble_oc.problem import ControlSignal, load_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="bang1d")
    ap.add_argument("--beta0", type=float, default=1.0)
    ap.add_argument("--tol", type=float, default=1e-2)
    ap.add_argument("--out", type=Path, default=Path("results/optimize"))
    args = ap.parse_args()

    p, _ = load_problem(args.problem)
    trace = solve(p, ControlSignal.constant(p), OptimizerOptions(beta0=args.beta0, tol=args.tol))
    for r in trace.records:
        print(f"iter {r.iteration:2d}  Phi={r.phi:.6f}  worst eta={r.worst_violation:+.4f}  beta={r.beta:.4g}  {'accepted' if r.accepted else 'rejected'}")
    print(f"stop: {trace.stop_reason}")
    write_trace_json(trace, args.out / "trace.json")
    write_control_csv(p, trace.control, args.out / "relaxed.csv")
    q = project_relaxed_to_ordinary(p, trace.control)
    write_control_csv(p, q, args.out / "projected.csv")
    print(f"relaxed Phi={ensemble_cost(p, trace.control):.6f}  projected Phi={ensemble_cost(p, q):.6f}")


if __name__ == "__main__":
    main()
