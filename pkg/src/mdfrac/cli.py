"""Command-line entry point: ``mdfrac run`` and ``mdfrac describe``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import io as vtkio
from .assembly import ProblemSpec, assemble_system
from .config import CHECKS, ConfigError, RunConfig, load_config, validate_config
from .mesh import MeshError
from .presets import PRESETS, PresetError, describe_preset
from .scaling import ParameterError, attach_scaling
from .solver import INFSUP_MAX_DOFS, SolverError, infsup_probe, max_relative_conservation, solve
from .verify import CheckResult, StudyConfig, convergence_study, rate_checks

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
CONSERVATION_LIMIT = 1e-10
INFSUP_RATIO_LIMIT = 2.0


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mdfrac", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve a benchmark or a mesh file and export the results")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=PRESETS)
    src.add_argument("--config", type=Path, help="JSON run configuration")
    run.add_argument("--levels", type=int, help="number of nested levels (a reference level is added when > 1)")
    run.add_argument("--rho", type=float, help="radius of the tip balls excluded from flux norms")
    run.add_argument("--tol", type=float, help="relative residual tolerance of the solver")
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int, help="seed of the non-matching mesh perturbation")
    run.add_argument("--check", choices=CHECKS, help="acceptance checks deciding the exit status")
    desc = sub.add_parser("describe", help="print the dimensional decomposition of a preset")
    desc.add_argument("preset", choices=PRESETS)
    return ap


def _config(args: argparse.Namespace) -> RunConfig:
    flags = {k: getattr(args, k) for k in ("levels", "rho", "tol", "out", "seed", "check")}
    if args.config is not None:
        return load_config(args.config).with_overrides(**flags)
    if args.preset is None:
        raise ConfigError("either --preset or --config is required")
    data = {"preset": args.preset, **{k: v for k, v in flags.items() if v is not None}}
    return validate_config(data)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run(cfg: RunConfig, stream=None) -> int:
    """Execute a configuration; returns the process exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stream = stream or sys.stdout
    say = lambda msg: print(msg, file=stream, flush=True)  # noqa: E731
    table = cfg.parameter_table()
    pressure, source = cfg.pressure_data(), cfg.source_data()
    mesh = cfg.base_mesh()
    solutions, timings = [], []
    report = None
    t0 = time.perf_counter()
    if cfg.levels == 1:
        fields = attach_scaling(mesh, table)
        system = assemble_system(ProblemSpec(mesh, fields, pressure, source, allow_clipping=cfg.allow_clipping))
        solutions.append(solve(system, cfg.tol))
    else:
        study = StudyConfig(
            cfg.name, cfg.levels, cfg.reference_extra, cfg.rho, cfg.tol, cfg.seed,
            table, pressure, source, allow_clipping=cfg.allow_clipping,
        )
        report = convergence_study(study, base=mesh, log=say, solutions=solutions)
    elapsed = time.perf_counter() - t0

    shown = solutions[min(cfg.levels, len(solutions)) - 1]
    vtkio.write_solution_vtk(shown, out / "vtk")
    stats = []
    for lev, sol in enumerate(solutions):
        st = sol.stats
        stats.append({"level": lev, "n_dofs": st.n_dofs, "nnz": st.nnz, "residual": st.residual,
                      "refinement_steps": st.refinement_steps, "backend": st.backend,
                      "conservation": max_relative_conservation(sol)})
        timings.append({"level": lev, "factor_ms": st.factor_time_ms, "solve_ms": st.solve_time_ms})
    _write_json(out / "solver_stats.json", {"name": cfg.name, "levels": stats})
    _write_json(out / "timings.json", {"total_s": elapsed, "levels": timings})
    if report is not None:
        (out / "convergence.csv").write_text(report.to_csv())
        (out / "convergence.json").write_text(report.to_json() + "\n")
        say(report.table())

    checks: list[CheckResult] = []
    if cfg.check in ("conservation", "all"):
        worst = max(s["conservation"] for s in stats)
        checks.append(CheckResult("conservation", worst, worst <= CONSERVATION_LIMIT, f"<= {CONSERVATION_LIMIT:g}"))
    if cfg.check in ("rates", "all"):
        if report is None:
            checks.append(CheckResult("rates", float("nan"), False, "needs --levels >= 2"))
        else:
            checks.extend(rate_checks(report, mesh.ambient_dim))
    if cfg.infsup:
        betas = [infsup_probe(s.system) for s in solutions[: cfg.levels] if s.system.layout.n_total <= INFSUP_MAX_DOFS]
        _write_json(out / "infsup.json", {"beta": betas})
        if cfg.check in ("infsup", "all"):
            if not betas:
                checks.append(CheckResult("infsup", float("nan"), False, f"no level below {INFSUP_MAX_DOFS} unknowns"))
            else:
                ratio = max(betas) / min(betas) if min(betas) > 0 else float("inf")
                checks.append(CheckResult("infsup ratio", ratio, ratio <= INFSUP_RATIO_LIMIT,
                                          f"<= {INFSUP_RATIO_LIMIT:g} over {len(betas)} level(s)"))
    for c in checks:
        say(c.line())
    say(f"wrote results to {out}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "describe":
        print(describe_preset(args.preset))
        return EXIT_OK
    try:
        cfg = _config(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg)
    except (ConfigError, ParameterError, MeshError, PresetError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, MemoryError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
