"""Needle-variation quotients against eta for shrinking widths.

    python scripts/needle_convergence.py --problem bang1d --control 0 --tbar 0.25 --ubar 1
"""

import argparse
from pathlib import Path

from ensemble_oc.optimality import needle_derivative_fd
from ensemble_oc.problem import ControlSignal, load_problem
from ensemble_oc.reporting import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="bang1d")
    ap.add_argument("--control", type=float, nargs="*", default=[0.0])
    ap.add_argument("--tbar", type=float, default=0.25)
    ap.add_argument("--ubar", type=float, nargs="*", default=[1.0])
    ap.add_argument("--halvings", type=int, default=4)
    ap.add_argument("--out", type=Path, default=Path("results/needle.csv"))
    args = ap.parse_args()

    p, _ = load_problem(args.problem)
    u = ControlSignal.constant(p, args.control)
    eps = [p.dt * 2**k for k in reversed(range(args.halvings))]
    nc = needle_derivative_fd(p, u, args.tbar, args.ubar, eps)
    print(f"eta = {nc.eta:.6f}")
    for e, q, err in zip(nc.eps, nc.quotients, nc.errors):
        print(f"eps={e:.6f}  quotient={q:.6f}  |quotient - eta|={err:.2e}")
    write_csv(args.out, ["eps", "quotient", "eta", "error"], [(e, q, nc.eta, r) for e, q, r in zip(nc.eps, nc.quotients, nc.errors)])


if __name__ == "__main__":
    main()
