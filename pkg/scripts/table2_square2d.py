"""Convergence table of the two-dimensional fracture network benchmark.

Usage: python scripts/table2_square2d.py [--levels 4] [--out results/square2d]
"""
from __future__ import annotations

import argparse
from pathlib import Path

from mdfrac.verify import StudyConfig, convergence_study, rate_checks


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--reference-extra", type=int, default=1)
    ap.add_argument("--rho", type=float, default=0.02)
    ap.add_argument("--out", type=Path, default=Path("results/square2d"))
    args = ap.parse_args()
    report = convergence_study(StudyConfig("square2d", args.levels, args.reference_extra, args.rho), log=print)
    print(report.table())
    for c in rate_checks(report, 2):
        print(c.line())
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "convergence.csv").write_text(report.to_csv())
    (args.out / "convergence.json").write_text(report.to_json() + "\n")


if __name__ == "__main__":
    main()
