#!/usr/bin/env python3
"""Run the manufactured-solution convergence studies and print rate fits.

For every selected builtin case the coupled schedule (M, M) for M in the
sweep is solved, the broken H^1 error recorded, and ln(error) regressed
against M.  Singular cases should show a clean straight line (exponential
decay in the layer count); the smooth square saturates its outer elements
instead, which shows up as a super-linear tail.

Usage:
    python3 scripts/convergence_study.py --sweep 2..5
    python3 scripts/convergence_study.py --case lshape_rz --sweep 2..6 --csv-dir out/
"""

import argparse
import pathlib
import sys

from lsqsem.cases import BUILTIN_CASE_NAMES, builtin_case
from lsqsem.harness import choose_discretization, convergence_run


def parse_range(text):
    lo, _, hi = text.partition("..")
    return range(int(lo), int(hi or lo) + 1)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", action="append", choices=sorted(BUILTIN_CASE_NAMES),
                    help="case to run (repeatable; default: all)")
    ap.add_argument("--sweep", default="2..5", help="M range, e.g. 2..5")
    ap.add_argument("--quad-order", type=int, default=None)
    ap.add_argument("--csv-dir", type=pathlib.Path, default=None,
                    help="write one CSV per case into this directory")
    ns = ap.parse_args(argv)

    names = ns.case or sorted(BUILTIN_CASE_NAMES)
    schedule = choose_discretization("analytic", parse_range(ns.sweep))
    if ns.csv_dir is not None:
        ns.csv_dir.mkdir(parents=True, exist_ok=True)

    for name in names:
        case = builtin_case(name)
        csv_path = ns.csv_dir / f"convergence_{name}.csv" if ns.csv_dir else None
        result = convergence_run(case, schedule, mode=case.spec.mode,
                                 quad_order=ns.quad_order, csv_path=csv_path)
        print(f"\n{name} (mode={case.spec.mode})")
        print(f"  {'M':>3} {'W':>3} {'unknowns':>9} {'broken H1':>12} {'L2':>12}")
        for r in result.rows:
            print(f"  {r['M']:>3} {r['W']:>3} {r['unknowns']:>9} "
                  f"{r['broken_h1_error']:>12.4e} {r['l2_error']:>12.4e}")
        if result.fit:
            print(f"  fit: ln(err) ~ -{result.fit['rate']:.3f} * M, "
                  f"R^2 = {result.fit['r_squared']:.4f}")
        else:
            print("  fit: skipped (need >= 3 points)")
        if csv_path:
            print(f"  wrote {csv_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
