"""Convergence table of the three-plane cube benchmark.

Usage: python scripts/table3_cube3d.py [--levels 3] [--out results/cube3d]
"""
from __future__ import annotations

import argparse
from pathlib import Path

from mdfrac.verify import StudyConfig, convergence_study, rate_checks


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--reference-extra", type=int, default=1)
    ap.add_argument("--rho", type=float, default=0.02)
    ap.add_argument("--out", type=Path, default=Path("results/cube3d"))
    args = ap.parse_args()
    report = convergence_study(StudyConfig("cube3d", args.levels, args.reference_extra, args.rho), log=print)
    print(report.table())
    for c in rate_checks(report, 3):
        print(c.line())
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "convergence.csv").write_text(report.to_csv())
    (args.out / "convergence.json").write_text(report.to_json() + "\n")


if __name__ == "__main__":
    main()
