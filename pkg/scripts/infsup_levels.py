"""Discrete inf-sup estimates across refinement levels and aperture values."""
from __future__ import annotations

import argparse

from mdfrac import ProblemSpec, assemble_system, attach_scaling
from mdfrac.mesh import refine_family
from mdfrac.presets import build_benchmark_mesh, single_fracture_parameters, unfractured_parameters
from mdfrac.solver import infsup_probe


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--gamma", type=float, nargs="+", default=[1e-4, 1e-2, 1.0])
    args = ap.parse_args()
    cases = [("unfractured-2d", None, unfractured_parameters())]
    cases += [("single-fracture-2d", g, single_fracture_parameters(K_nu=1.0, gamma=g)) for g in args.gamma]
    for preset, gamma, table in cases:
        meshes = refine_family(build_benchmark_mesh(preset, 0), args.levels - 1)
        betas = [infsup_probe(assemble_system(ProblemSpec(m, attach_scaling(m, table), 0.0))) for m in meshes]
        label = preset if gamma is None else f"{preset} gamma={gamma:g}"
        print(f"{label:34s} " + " ".join(f"{b:.4f}" for b in betas) + f"  ratio {max(betas) / min(betas):.3f}")


if __name__ == "__main__":
    main()
