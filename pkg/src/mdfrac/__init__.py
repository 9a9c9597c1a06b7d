"""Mixed-dimensional flux-mortar mixed finite elements for Darcy flow in fractured media."""
from __future__ import annotations

import os

# cap BLAS/OpenMP pools before numpy loads them
if os.environ.get("MDFRAC_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["MDFRAC_THREADS"])

from .assembly import ProblemSpec, SaddleSystem, assemble_system  # noqa: E402
from .mesh import MixedDimMesh, Subdomain, Interface, refine, validate_mesh  # noqa: E402
from .presets import build_benchmark_mesh, default_parameters, default_pressure_data  # noqa: E402
from .scaling import FeatureParams, ParameterTable, ScalingFields, attach_scaling  # noqa: E402
from .solver import Solution, solve  # noqa: E402

__all__ = [
    "FeatureParams", "Interface", "MixedDimMesh", "ParameterTable", "ProblemSpec", "SaddleSystem",
    "ScalingFields", "Solution", "Subdomain", "assemble_system", "attach_scaling", "build_benchmark_mesh",
    "default_parameters", "default_pressure_data", "refine", "solve", "validate_mesh",
]
