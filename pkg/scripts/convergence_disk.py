#!/usr/bin/env python3
"""Manufactured-solution convergence study on the disk.

Runs the spatial study (implicit Euler, steps scaled with h^2) and the two
temporal studies (implicit Euler and midpoint against the semidiscrete
exact trajectory), printing one rate table per study.

Usage::

    python scripts/convergence_disk.py
    python scripts/convergence_disk.py --levels 1 2 3 4 --out rates.csv
"""

import argparse
import sys
from pathlib import Path

from dynbc import spatial_convergence, temporal_convergence


def print_table(name, table, expected):
    print(f"\n{name}  (expected order ~ {expected})")
    print(f"{'level':>6s}  {table.axis:>12s}  {'error':>12s}  {'rate':>6s}")
    rates = table.rates
    for k in range(len(table.errors)):
        rate = f"{rates[k - 1]:.2f}" if k else "  --"
        print(f"{k:6d}  {table.parameters[k]:12.5e}  {table.errors[k]:12.5e}  {rate:>6s}")
    if table.non_monotone:
        print("  WARNING: errors are not monotone")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3],
                        help="disk refinement levels for the spatial study")
    parser.add_argument("--steps", type=int, nargs="+", default=[8, 16, 32],
                        help="step counts for the temporal studies")
    parser.add_argument("--out", type=str, default=None,
                        help="optional CSV path for the combined table")
    args = parser.parse_args()

    studies = {
        "spatial (theta = 1)": (spatial_convergence(refinements=tuple(args.levels)), 2),
        "temporal (theta = 1)": (temporal_convergence(theta=1.0,
                                                      n_steps_list=tuple(args.steps)), 1),
        "temporal (theta = 1/2)": (temporal_convergence(theta=0.5,
                                                        n_steps_list=tuple(args.steps)), 2),
    }
    for name, (table, expected) in studies.items():
        print_table(name, table, expected)

    if args.out:
        rows = ["study,axis,parameter,error"]
        for name, (table, _) in studies.items():
            rows += [f"{name},{table.axis},{p!r},{e!r}"
                     for p, e in zip(table.parameters, table.errors)]
        Path(args.out).write_text("\n".join(rows) + "\n")
        print(f"\nwrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
