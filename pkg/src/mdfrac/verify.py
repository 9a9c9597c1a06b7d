"""Error norms, nested restriction and convergence studies."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .assembly import ProblemSpec, SaddleSystem, assemble_system, local_mass
from .mesh import Key, MixedDimMesh, point_simplex_distance, refine
from .presets import (
    base_mesh, default_parameters, default_pressure_data, everywhere, unfractured_square,
)
from .scaling import ParameterTable, attach_scaling
from .solver import Solution, solve
from .spaces import overlap_matrix

VARIABLES = ("u", "lambda", "p")


# ------------------------------------------------------------------ norms


def tip_excluded_cells(mesh: MixedDimMesh, key: Key, rho: float) -> np.ndarray:
    """Mask of cells of ``key`` that intersect a closed ball of radius ``rho`` around a tip."""
    s = mesh[key]
    mask = np.zeros(s.num_cells, dtype=bool)
    if rho <= 0 or len(mesh.tips) == 0 or s.dim == 0:
        return mask
    x = s.nodes[s.cells]  # (M, d+1, n)
    cen = x.mean(axis=1)
    rad = np.linalg.norm(x - cen[:, None, :], axis=2).max(axis=1)
    for tip in mesh.tips:
        cand = np.flatnonzero(np.linalg.norm(cen - tip, axis=1) <= rho + rad + 1e-14)
        for c in cand:
            if not mask[c] and point_simplex_distance(tip, x[c]) <= rho:
                mask[c] = True
    return mask


def _flux_sq(s, K, u: np.ndarray, keep: np.ndarray) -> float:
    if s.dim == 0 or not keep.any():
        return 0.0
    loc = local_mass(s, K)[keep]
    c = u[s.geometry.cell_facets[keep]]
    return float(np.einsum("mi,mij,mj->", c, loc, c))


def norm_flux(system: SaddleSystem, u_full: np.ndarray, rho: float = 0.0) -> dict[int, float]:
    """``|K^-1/2 u|`` per dimension, skipping cells that touch a tip ball of radius ``rho``."""
    mesh, fields, layout = system.layout.mesh, system.problem.fields, system.layout
    out: dict[int, float] = {}
    for s in mesh:
        if s.dim == 0:
            continue
        keep = ~tip_excluded_cells(mesh, s.key, rho)
        out[s.dim] = out.get(s.dim, 0.0) + _flux_sq(s, fields.K[s.key], u_full[layout.full_slice(s.key)], keep)
    return {d: math.sqrt(v) for d, v in out.items()}


def norm_mortar(system: SaddleSystem, lam: np.ndarray) -> dict[int, float]:
    """``|gamma^1/2 K_nu^-1/2 lambda|`` per interface dimension."""
    mesh, layout = system.layout.mesh, system.layout
    w = system.mortar_mass.diagonal()
    out: dict[int, float] = {}
    for k, f in enumerate(mesh.interfaces):
        sl = layout.mortar_slice(k)
        out[f.dim] = out.get(f.dim, 0.0) + float(np.sum(w[sl] * lam[sl] ** 2))
    return {d: math.sqrt(v) for d, v in out.items()}


def norm_pressure(system: SaddleSystem, p: np.ndarray) -> dict[int, float]:
    """``|eps_hat_max q|`` per dimension."""
    mesh, layout, fields = system.layout.mesh, system.layout, system.problem.fields
    out: dict[int, float] = {}
    for s in mesh:
        q = p[layout.pressure_slice(s.key)]
        val = float(np.sum(s.geometry.volumes * (fields.eps_hat_max[s.key] * q) ** 2))
        out[s.dim] = out.get(s.dim, 0.0) + val
    return {d: math.sqrt(v) for d, v in out.items()}


# ------------------------------------------------------------------ restriction


@dataclass(frozen=True)
class LevelData:
    """Solution arrays of one level in the full (unsplit) flux numbering."""

    u_full: np.ndarray
    lam: np.ndarray
    p: np.ndarray

    @classmethod
    def from_solution(cls, sol: Solution) -> "LevelData":
        return cls(np.array(sol.u_full), np.array(sol.lam), np.array(sol.p))


def restrict_once(fine: MixedDimMesh, coarse: MixedDimMesh, data: LevelData,
                  fine_layout, coarse_layout) -> LevelData:
    """Aggregate a solution from ``fine = refine(coarse)`` onto ``coarse``.

    Pressures and mortar fluxes are volume-weighted child averages; facet
    fluxes are sums over child facets with their orientation relative to the
    parent facet.
    """
    if fine.parents is None:
        raise ValueError("fine mesh carries no parent maps")
    u = np.zeros(coarse_layout.n_full)
    p = np.zeros(coarse_layout.n_p)
    for s in coarse:
        pm = fine.parents[s.key]
        fs = fine[s.key]
        q = data.p[fine_layout.pressure_slice(s.key)]
        vol = fs.geometry.volumes
        agg = np.bincount(pm.cell_parent, weights=vol * q, minlength=s.num_cells)
        p[coarse_layout.pressure_slice(s.key)] = agg / s.geometry.volumes
        if s.dim == 0:
            continue
        uf = data.u_full[fine_layout.full_slice(s.key)]
        has = pm.facet_parent >= 0
        u[coarse_layout.full_slice(s.key)] = np.bincount(
            pm.facet_parent[has], weights=pm.facet_sign[has] * uf[has], minlength=s.num_facets
        )
    lam = np.zeros(coarse_layout.n_lambda)
    for k, f in enumerate(coarse.interfaces):
        lo_c, lo_f = coarse[f.lower_key], fine[f.lower_key]
        cells_f = fine.trace[k].mortar_cells
        cells_c = coarse.trace[k].mortar_cells
        pos = np.empty(lo_c.num_cells, dtype=np.int64)
        pos[cells_c] = np.arange(len(cells_c))
        parent = fine.parents[f.lower_key].cell_parent[cells_f]
        w = lo_f.geometry.volumes[cells_f]
        vals = data.lam[fine_layout.mortar_slice(k)]
        agg = np.bincount(pos[parent], weights=w * vals, minlength=len(cells_c))
        lam[coarse_layout.mortar_slice(k)] = agg / lo_c.geometry.volumes[cells_c]
    return LevelData(u, lam, p)


def prolong_pressure(fine: MixedDimMesh, coarse_layout, fine_layout, p: np.ndarray) -> np.ndarray:
    """Piecewise-constant injection of a coarse pressure into the children."""
    out = np.zeros(fine_layout.n_p)
    for s in fine:
        pm = fine.parents[s.key]
        out[fine_layout.pressure_slice(s.key)] = p[coarse_layout.pressure_slice(s.key)][pm.cell_parent]
    return out


# ------------------------------------------------------------------ report


@dataclass
class ConvergenceReport:
    """Relative errors and rates per variable and dimension across nested levels."""

    preset: str
    levels: list[int]
    h_ratio: list[float]
    errors: dict[tuple[str, int], list[float]]
    metadata: dict = field(default_factory=dict)

    def rates(self, var: str, dim: int) -> list[float]:
        e = self.errors[(var, dim)]
        out = []
        for a, b in zip(e[:-1], e[1:]):
            out.append(math.log2(a / b) if a > 0 and b > 0 else float("nan"))
        return out

    def mean_rate(self, var: str, dim: int, last: int = 2) -> float:
        r = self.rates(var, dim)[-last:]
        return float(np.mean(r)) if r else float("nan")

    def keys(self) -> list[tuple[str, int]]:
        order = {v: i for i, v in enumerate(VARIABLES)}
        return sorted(self.errors, key=lambda k: (order[k[0]], -k[1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "dim", "variable", "error", "rate"])
        for var, dim in self.keys():
            e = self.errors[(var, dim)]
            r = [""] + [f"{x:.6f}" for x in self.rates(var, dim)]
            for lev, err, rate in zip(self.levels, e, r):
                w.writerow([lev, dim, var, f"{err:.10e}", rate])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "preset": self.preset,
            "levels": self.levels,
            "h_ratio": self.h_ratio,
            "mean_rates_last_two": {
                f"{var}_d{dim}": round(self.mean_rate(var, dim), 6) for var, dim in self.keys()
            },
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [f"{'var':>6} {'d':>2} " + " ".join(f"{'err':>10} {'rate':>6}" for _ in self.levels)]
        for var, dim in self.keys():
            e, r = self.errors[(var, dim)], [float("nan")] + self.rates(var, dim)
            cells = " ".join(f"{a:10.3e} {b:6.2f}" for a, b in zip(e, r))
            lines.append(f"{var:>6} {dim:>2} {cells}")
        return "\n".join(lines)


@dataclass
class StudyConfig:
    """Inputs of a nested-refinement convergence study."""

    preset: str
    levels: int = 4
    reference_extra: int = 1
    rho: float = 0.02
    tol: float = 1e-10
    seed: int = 0
    parameters: ParameterTable | None = None
    pressure: object = None
    source: object = None
    memory_dofs: int = 2_000_000
    allow_clipping: bool = False


def _relative(err: dict[int, float], ref: dict[int, float]) -> dict[int, float]:
    return {d: (err[d] / ref[d] if ref.get(d, 0) > 0 else err[d]) for d in err}


def convergence_study(
    preset: str | StudyConfig, levels: int = 4, reference_extra: int = 1, rho: float = 0.02,
    *, base: MixedDimMesh | None = None, log: Callable[[str], None] | None = None,
    solutions: list | None = None, **kw,
) -> ConvergenceReport:
    """Errors of levels ``0..levels-1`` against level ``levels - 1 + reference_extra``.

    The reference solution is aggregated onto every coarser level, so the
    comparison involves no interpolation.  Returns relative errors in the
    flux, mortar and pressure norms, per dimension.
    """
    cfg = preset if isinstance(preset, StudyConfig) else StudyConfig(
        preset, levels, reference_extra, rho, **kw)
    table = cfg.parameters or default_parameters(cfg.preset)
    pressure = cfg.pressure if cfg.pressure is not None else default_pressure_data(cfg.preset)
    mesh = base if base is not None else base_mesh(cfg.preset, cfg.seed)
    nlev = cfg.levels + cfg.reference_extra
    meshes = [mesh]
    for _ in range(nlev - 1):
        meshes.append(refine(meshes[-1]))
    data, systems = [], []
    t_start = time.perf_counter()
    for lev, m in enumerate(meshes):
        fields = attach_scaling(m, table)
        system = assemble_system(ProblemSpec(m, fields, pressure, cfg.source, allow_clipping=cfg.allow_clipping))
        if system.layout.n_total > cfg.memory_dofs:
            raise MemoryError(f"level {lev} has {system.layout.n_total} unknowns, above the memory guard")
        sol = solve(system, cfg.tol)
        if solutions is not None:
            solutions.append(sol)
        if log:
            log(f"level {lev}: {system.layout.n_total} unknowns, residual {sol.stats.residual:.1e}, "
                f"{time.perf_counter() - t_start:.1f}s")
        data.append(LevelData.from_solution(sol))
        systems.append(system)
    ref = data[-1]
    restricted = [None] * cfg.levels
    cur = ref
    for lev in range(nlev - 2, -1, -1):
        cur = restrict_once(meshes[lev + 1], meshes[lev], cur, systems[lev + 1].layout, systems[lev].layout)
        if lev < cfg.levels:
            restricted[lev] = cur
    errors: dict[tuple[str, int], list[float]] = {}
    for lev in range(cfg.levels):
        s, d, r = systems[lev], data[lev], restricted[lev]
        parts = {
            "u": (norm_flux(s, d.u_full - r.u_full, cfg.rho), norm_flux(s, r.u_full, cfg.rho)),
            "lambda": (norm_mortar(s, d.lam - r.lam), norm_mortar(s, r.lam)),
            "p": (norm_pressure(s, d.p - r.p), norm_pressure(s, r.p)),
        }
        for var, (err, nrm) in parts.items():
            for dim, val in _relative(err, nrm).items():
                errors.setdefault((var, dim), []).append(val)
    # mortar norms vanish identically where gamma = 0 everywhere; drop empty entries
    errors = {k: v for k, v in errors.items() if any(x > 0 for x in v)}
    return ConvergenceReport(
        cfg.preset, list(range(cfg.levels)), [2.0 ** -lev for lev in range(cfg.levels)], errors,
        {"rho": cfg.rho, "reference_level": nlev - 1, "tol": cfg.tol, "seed": cfg.seed},
    )


# ------------------------------------------------------------------ pass/fail rules

RATE_BAND_2D = (0.8, 1.5)
RATE_FLOOR = 0.8


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.6g} {self.detail}".rstrip()


def rate_checks(report: ConvergenceReport, ambient_dim: int) -> list[CheckResult]:
    """Observed rates against the acceptance rules.

    Two-dimensional runs require the mean rate over the last two steps to lie
    in ``[0.8, 1.5]`` for ``u`` and ``p`` on dimensions 1 and 2 and for
    ``lambda`` on dimension 1. Three-dimensional runs require every step
    rate on every dimension >= 1 to be at least 0.8. Point pressures and
    point mortars are reported but not judged.
    """
    out = []
    for var, dim in report.keys():
        if dim == 0:
            continue
        if ambient_dim == 2:
            if var == "lambda" and dim != 1:
                continue
            r = report.mean_rate(var, dim)
            lo, hi = RATE_BAND_2D
            ok, rule = lo <= r <= hi, f"mean of last two steps in [{lo}, {hi}]"
        else:
            steps = report.rates(var, dim)
            r = min(steps)
            ok = r >= RATE_FLOOR
            rule = f"every step >= {RATE_FLOOR} (steps {', '.join(f'{x:.2f}' for x in steps)})"
        out.append(CheckResult(f"rate {var} d={dim}", r, bool(ok), rule))
    return out


# ------------------------------------------------------------------ manufactured solution

_TRI7 = (
    np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [0.059715871789770, 0.470142064105115, 0.470142064105115],
        [0.470142064105115, 0.059715871789770, 0.470142064105115],
        [0.470142064105115, 0.470142064105115, 0.059715871789770],
        [0.797426985353087, 0.101286507323456, 0.101286507323456],
        [0.101286507323456, 0.797426985353087, 0.101286507323456],
        [0.101286507323456, 0.101286507323456, 0.797426985353087],
    ]),
    np.array([0.225, *[0.132394152788506] * 3, *[0.125939180544827] * 3]),
)


def manufactured_errors(level: int) -> tuple[float, float, Solution]:
    """L2 errors of flux and pressure for ``p = sin(pi x1) sin(pi x2)`` on the unit square."""
    mesh = unfractured_square(everywhere)
    for _ in range(level):
        mesh = refine(mesh)
    fields = attach_scaling(mesh, default_parameters("unfractured-2d"))
    src = lambda x: 2 * np.pi ** 2 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])  # noqa: E731
    system = assemble_system(ProblemSpec(mesh, fields, 0.0, {2: src}))
    sol = solve(system)
    s = mesh[(2, 1)]
    g = s.geometry
    bary, w = _TRI7
    x = s.nodes[s.cells]
    c = sol.flux(s.key)[g.cell_facets] * g.signs
    ep = eu = 0.0
    ph = sol.pressure(s.key)
    for q in range(len(w)):
        xq = np.einsum("k,mkj->mj", bary[q], x)
        p = np.sin(np.pi * xq[:, 0]) * np.sin(np.pi * xq[:, 1])
        u = -np.pi * np.stack([np.cos(np.pi * xq[:, 0]) * np.sin(np.pi * xq[:, 1]),
                               np.sin(np.pi * xq[:, 0]) * np.cos(np.pi * xq[:, 1])], axis=1)
        uh = np.einsum("mi,mij->mj", c, xq[:, None, :] - x) / (2 * g.volumes[:, None])
        ep += np.sum(w[q] * g.volumes * (ph - p) ** 2)
        eu += np.sum(w[q] * g.volumes * np.sum((uh - u) ** 2, axis=1))
    return math.sqrt(eu), math.sqrt(ep), sol


def manufactured_study(levels: Sequence[int] = (2, 3, 4, 5)) -> ConvergenceReport:
    errs: dict[tuple[str, int], list[float]] = {("u", 2): [], ("p", 2): []}
    for lev in levels:
        eu, ep, _ = manufactured_errors(lev)
        errs[("u", 2)].append(eu)
        errs[("p", 2)].append(ep)
    return ConvergenceReport("unfractured-2d-manufactured", list(levels),
                             [2.0 ** -(lev - levels[0]) for lev in levels], errs, {"exact": "sin(pi x1) sin(pi x2)"})


# ------------------------------------------------------------------ consistency checks


def upper_trace_pressure(sol: Solution, k: int) -> np.ndarray:
    """Upper-side pressure on each mortar cell: overlap-weighted adjacent cell values."""
    system = sol.system
    mesh = system.layout.mesh
    f = mesh.interfaces[k]
    tr = mesh.trace[k]
    up, lo = mesh[f.upper_key], mesh[f.lower_key]
    ov = overlap_matrix(mesh, k, system.problem.allow_clipping)
    cells = up.geometry.facet_cells[tr.upper_facets, 0]
    pu = sol.pressure(f.upper_key)[cells]
    return (ov.T @ pu) / lo.geometry.volumes[tr.mortar_cells]


def pressure_jump_check(sol: Solution, k: int) -> float:
    """Max over mortar cells of ``|lambda / eps_hat + K_nu (p_lower - p_upper) / gamma|``.

    Cells with zero aperture are skipped.
    """
    system = sol.system
    mesh, fields = system.layout.mesh, system.problem.fields
    f = mesh.interfaces[k]
    tr = mesh.trace[k]
    lam = sol.mortar(k)
    gam = fields.gamma_m[k]
    eh = fields.eps_hat[k]
    ok = (gam > 0) & (eh > 0)
    if not ok.any():
        return 0.0
    pl = sol.pressure(f.lower_key)[tr.mortar_cells]
    pu = upper_trace_pressure(sol, k)
    res = lam[ok] / eh[ok] + fields.K_nu[k][ok] * (pl[ok] - pu[ok]) / gam[ok]
    return float(np.abs(res).max())


def fracture_neighbors(s) -> list[np.ndarray]:
    """Cell neighbours through interior facets of a one-dimensional subdomain."""
    fc = s.geometry.facet_cells
    inner = fc[fc[:, 1] >= 0]
    nb = [[] for _ in range(s.num_cells)]
    for a, b in inner:
        nb[a].append(b)
        nb[b].append(a)
    return [np.array(v, dtype=np.int64) for v in nb]


def oscillation_excess(sol: Solution, key: Key, centre: np.ndarray, radius: float) -> float:
    """Largest overshoot of a cell pressure beyond its neighbours, relative to the neighbour range.

    For each cell of ``key`` within ``radius`` of ``centre`` the overshoot is
    the distance of its value outside the interval spanned by its neighbours.
    Cells with fewer than two neighbours (ends and cells next to an
    intersection point) have no interval and are skipped. Returns ``max(overshoot / range)`` (0 when no overshoot occurs).
    """
    s = sol.system.layout.mesh[key]
    p = sol.pressure(key)
    near = np.flatnonzero(np.linalg.norm(s.geometry.centroids - centre, axis=1) <= radius)
    worst = 0.0
    for c, nb in zip(near, (fracture_neighbors(s)[i] for i in near)):
        if len(nb) < 2:
            continue
        lo, hi = p[nb].min(), p[nb].max()
        over = max(p[c] - hi, lo - p[c], 0.0)
        if over == 0.0:
            continue
        rng = hi - lo
        worst = max(worst, over / rng if rng > 0 else math.inf)
    return worst


def zero_aperture_jump(sol: Solution, key: Key) -> float:
    """Largest pressure jump between a lower subdomain and its neighbours on zero-aperture mortar cells."""
    mesh, fields = sol.system.layout.mesh, sol.system.problem.fields
    worst = 0.0
    for k in mesh.interfaces_of(key):
        z = fields.gamma_m[k] == 0
        if not z.any():
            continue
        pl = sol.pressure(key)[mesh.trace[k].mortar_cells]
        pu = upper_trace_pressure(sol, k)
        worst = max(worst, float(np.abs(pl - pu)[z].max()))
    return worst


def mean_speed(sol: Solution, key: Key) -> float:
    v = sol.cell_velocity(key)
    s = sol.system.layout.mesh[key]
    return float(np.sum(np.linalg.norm(v, axis=1) * s.geometry.volumes) / s.measure)


def adjacent_matrix_speed(sol: Solution, key: Key) -> float:
    """Mean speed of the top-dimensional cells that touch a lower-dimensional subdomain."""
    mesh = sol.system.layout.mesh
    cells_by_upper: dict[Key, list[np.ndarray]] = {}
    for k in mesh.interfaces_of(key):
        f = mesh.interfaces[k]
        up = mesh[f.upper_key]
        cells_by_upper.setdefault(f.upper_key, []).append(up.geometry.facet_cells[mesh.trace[k].upper_facets, 0])
    total = vol = 0.0
    for ukey, lists in cells_by_upper.items():
        cells = np.unique(np.concatenate(lists))
        v = np.linalg.norm(sol.cell_velocity(ukey)[cells], axis=1)
        w = mesh[ukey].geometry.volumes[cells]
        total += float(np.sum(v * w))
        vol += float(w.sum())
    return total / vol


def through_flux(sol: Solution, key: Key, side: Callable[[np.ndarray], np.ndarray]) -> float:
    """Total outward flux through the Dirichlet facets of ``key`` selected by ``side``."""
    s = sol.system.layout.mesh[key]
    fac = s.facets_with_tag("dirichlet")
    sel = side(s.geometry.facet_centroids[fac])
    return float(sol.flux(key)[fac[sel]].sum())
