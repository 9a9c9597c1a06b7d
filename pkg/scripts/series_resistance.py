"""Through-flux of the single-fracture problem against the series-resistance formula.

The matrix contributes a unit resistance and each side of the fracture a
resistance ``gamma / K_nu``, so a unit pressure drop drives the flux
``1 / (1 + 2 gamma / K_nu)``.
"""
from __future__ import annotations

import argparse

from mdfrac import ProblemSpec, assemble_system, attach_scaling, solve
from mdfrac.presets import build_benchmark_mesh, single_fracture_parameters
from mdfrac.verify import through_flux


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--gamma", type=float, default=0.01)
    ap.add_argument("--K-nu", type=float, nargs="+", default=[0.001, 0.01, 0.1, 1.0, 100.0])
    args = ap.parse_args()
    print(f"{'K_nu':>8} {'level':>5} {'flux':>18} {'formula':>18} {'rel. error':>10}")
    for k_nu in args.K_nu:
        exact = 1.0 / (1.0 + 2.0 * args.gamma / k_nu)
        for lev in range(args.levels):
            mesh = build_benchmark_mesh("single-fracture-2d", lev)
            fields = attach_scaling(mesh, single_fracture_parameters(K_nu=k_nu, gamma=args.gamma))
            sol = solve(assemble_system(ProblemSpec(mesh, fields, "1 - x1")))
            flux = through_flux(sol, (2, 1), lambda x: x[:, 0] > 0.5)
            print(f"{k_nu:8g} {lev:5d} {flux:18.15f} {exact:18.15f} {abs(flux - exact) / exact:10.1e}")


if __name__ == "__main__":
    main()
