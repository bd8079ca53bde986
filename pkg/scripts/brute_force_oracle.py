"""Exhaustive search over constant controls for a one-control problem.

Evaluates the cost of every constant control on a uniform lattice of Delta
by Monte Carlo and by the grid route, then writes a CSV and reports the
minimizer.

    python scripts/brute_force_oracle.py --problem bang1d --points 21 --N 1000000
"""

import argparse
from pathlib import Path

import numpy as np

from ensemble_oc.analysis import ensemble_cost, monte_carlo_cost
from ensemble_oc.problem import ControlSignal, load_problem
from ensemble_oc.reporting import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="bang1d")
    ap.add_argument("--points", type=int, default=21)
    ap.add_argument("--N", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", type=Path, default=Path("results/oracle.csv"))
    args = ap.parse_args()

    p, _ = load_problem(args.problem)
    if p.m != 1:
        raise SystemExit("this oracle scans a single control axis")
    rows = []
    for w in p.delta.grid(args.points)[:, 0]:
        u = ControlSignal.constant(p, [w])
        mc = monte_carlo_cost(p, u, N=args.N, seed=args.seed)
        rows.append((float(w), mc.estimate, mc.std_error, ensemble_cost(p, u)))
        print(f"u={w:+.2f}  MC={mc.estimate:.6f} +- {mc.std_error:.1e}  grid={rows[-1][3]:.6f}")
    best = min(rows, key=lambda r: r[1])
    print(f"minimizer u={best[0]:+.2f} with cost {best[1]:.6f}")
    write_csv(args.out, ["u1", "mc_cost", "mc_se", "grid_cost"], rows)


if __name__ == "__main__":
    main()
