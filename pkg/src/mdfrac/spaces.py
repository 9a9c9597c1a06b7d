"""Lowest-order discrete spaces and the operators between them.

Fluxes are RT0 on every subdomain of positive dimension with one degree of
freedom per facet: the integrated normal flux in the direction of the
global facet normal.  Pressures are piecewise constant (one value per point
subdomain), mortar fluxes are piecewise constant on the mortar grids.

The flux degrees of freedom of a subdomain split into three groups:

* ``free``: interior and Dirichlet facets (the ``u0`` unknowns);
* ``trace``: facets on an interface, set by the mortar flux through the
  extension operator;
* ``fixed``: Neumann facets and immersed tips, constrained to zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

from .mesh import TAG_CODE, Key, MixedDimMesh

FREE, TRACE, FIXED = 0, 1, 2


class SpaceError(ValueError):
    """Raised for incompatible grids or unsupported projections."""


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """A finalized CSR matrix between two labelled blocks."""

    matrix: sp.csr_matrix
    codomain: str
    domain: str

    def __post_init__(self) -> None:
        m = sp.csr_matrix(self.matrix, dtype=float)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def T(self) -> "SparseOperator":
        return SparseOperator(self.matrix.T.tocsr(), self.domain, self.codomain)

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            if other.codomain != self.domain:
                raise SpaceError(f"cannot compose {self.domain} with {other.codomain}")
            return SparseOperator(self.matrix @ other.matrix, self.codomain, other.domain)
        return self.matrix @ other

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def write_mtx(self, path) -> None:
        scipy.io.mmwrite(str(path), self.matrix, comment=f"{self.codomain} x {self.domain}", precision=17)


# ------------------------------------------------------------------ layout


@dataclass(frozen=True, eq=False)
class DofLayout:
    """Index maps of the flux, mortar and pressure blocks.

    ``full_offset[key]`` numbers every facet of every subdomain (the space
    ``V_h`` before splitting).  ``flux_free[key]`` lists the local facets in
    ``V_0``, ``flux_trace[k]`` the local facets of the upper subdomain of
    interface ``k``.  The unknown vector is ordered ``(u0, lambda, p)``.
    """

    mesh: MixedDimMesh
    category: dict[Key, np.ndarray]
    full_offset: dict[Key, int]
    n_full: int
    flux_free: dict[Key, np.ndarray]
    flux_offset: dict[Key, int]
    flux_trace: list[np.ndarray]
    mortar_offset: list[int]
    pressure_offset: dict[Key, int]
    n_u: int
    n_lambda: int
    n_p: int
    free_to_full: np.ndarray = field(repr=False)

    @property
    def n_total(self) -> int:
        return self.n_u + self.n_lambda + self.n_p

    @property
    def block_offsets(self) -> tuple[int, int, int, int]:
        return 0, self.n_u, self.n_u + self.n_lambda, self.n_total

    def mortar_slice(self, k: int) -> slice:
        o = self.mortar_offset[k]
        return slice(o, o + self.mesh.interfaces[k].num_mortar)

    def pressure_slice(self, key: Key) -> slice:
        o = self.pressure_offset[key]
        return slice(o, o + self.mesh[key].num_cells)

    def full_slice(self, key: Key) -> slice:
        o = self.full_offset[key]
        return slice(o, o + self.mesh[key].num_facets)

    def counts_by_dim(self) -> dict[int, dict[str, int]]:
        out: dict[int, dict[str, int]] = {}
        for s in self.mesh:
            c = out.setdefault(s.dim, {"flux": 0, "flux_free": 0, "flux_trace": 0, "mortar": 0, "pressure": 0})
            c["flux"] += s.num_facets if s.dim else 0
            c["flux_free"] += len(self.flux_free[s.key])
            c["flux_trace"] += int(np.sum(self.category[s.key] == TRACE))
            c["pressure"] += s.num_cells
        for f in self.mesh.interfaces:
            out[f.dim]["mortar"] += f.num_mortar
        return out

    def selection(self) -> sp.csr_matrix:
        """Injection of ``u0`` into the full flux vector."""
        n = self.n_u
        return sp.csr_matrix((np.ones(n), (self.free_to_full, np.arange(n))), shape=(self.n_full, n))


def build_layout(mesh: MixedDimMesh) -> DofLayout:
    """Number the RT0, mortar and pressure degrees of freedom of a mesh."""
    category, full_offset, flux_free, flux_offset, pressure_offset = {}, {}, {}, {}, {}
    n_full = n_u = n_p = 0
    free_to_full = []
    for s in mesh:
        nf = s.num_facets if s.dim else 0
        cat = np.full(nf, FREE, dtype=np.int8)
        if nf:
            codes = s.facet_tag_codes
            cat[codes == TAG_CODE["interface"]] = TRACE
            cat[(codes == TAG_CODE["neumann"]) | (codes == TAG_CODE["tip"])] = FIXED
        category[s.key] = cat
        full_offset[s.key] = n_full
        free = np.flatnonzero(cat == FREE)
        flux_free[s.key] = free
        flux_offset[s.key] = n_u
        free_to_full.append(n_full + free)
        n_full += nf
        n_u += len(free)
        pressure_offset[s.key] = n_p
        n_p += s.num_cells
    flux_trace, mortar_offset = [], []
    n_lambda = 0
    for f, tr in zip(mesh.interfaces, mesh.trace):
        flux_trace.append(tr.upper_facets)
        mortar_offset.append(n_lambda)
        n_lambda += f.num_mortar
    return DofLayout(
        mesh, category, full_offset, n_full, flux_free, flux_offset, flux_trace,
        mortar_offset, pressure_offset, n_u, n_lambda, n_p,
        np.concatenate(free_to_full) if free_to_full else np.zeros(0, np.int64),
    )


# ------------------------------------------------------------------ projection


def _interval_overlaps(fa, fb, ca, cb):
    """Overlap lengths between facet intervals and non-overlapping cell intervals."""
    order = np.argsort(ca)
    L, R = ca[order], cb[order]
    lo = np.searchsorted(R, fa, side="right")
    hi = np.searchsorted(L, fb, side="left")
    n = np.maximum(hi - lo, 0)
    rows = np.repeat(np.arange(len(fa)), n)
    cols = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)]) if n.sum() else np.zeros(0, int)
    ov = np.minimum(fb[rows], R[cols]) - np.maximum(fa[rows], L[cols])
    keep = ov > 1e-14 * np.maximum(fb[rows] - fa[rows], 1e-300)
    return rows[keep], order[cols[keep]], ov[keep]


def _clip(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a convex polygon by a counter-clockwise convex polygon."""
    out = subject
    for i in range(len(clipper)):
        if len(out) == 0:
            break
        a, b = clipper[i], clipper[(i + 1) % len(clipper)]
        e = b - a
        side = e[0] * (out[:, 1] - a[1]) - e[1] * (out[:, 0] - a[0])
        nxt = []
        for j in range(len(out)):
            p, q = out[j], out[(j + 1) % len(out)]
            sp_, sq = side[j], side[(j + 1) % len(out)]
            if sp_ >= 0:
                nxt.append(p)
            if (sp_ >= 0) != (sq >= 0):
                t = sp_ / (sp_ - sq)
                nxt.append(p + t * (q - p))
        out = np.array(nxt).reshape(-1, 2)
    return out


def _triangle_keys(t: np.ndarray) -> np.ndarray:
    """Rounded vertex coordinates of each triangle, vertices sorted lexicographically."""
    t = np.round(t, 12) + 0.0
    order = np.lexsort((t[:, :, 1], t[:, :, 0]), axis=-1)
    return np.take_along_axis(t, order[:, :, None], axis=1).reshape(len(t), -1)


def _polygon_area(p: np.ndarray) -> float:
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _ccw(t: np.ndarray) -> np.ndarray:
    a = (t[1, 0] - t[0, 0]) * (t[2, 1] - t[0, 1]) - (t[1, 1] - t[0, 1]) * (t[2, 0] - t[0, 0])
    return t if a > 0 else t[::-1]


def overlap_matrix(mesh: MixedDimMesh, k: int, allow_clipping: bool = False) -> sp.csr_matrix:
    """Measures ``|F ∩ c|`` between trace facets (rows) and mortar cells (columns)."""
    f = mesh.interfaces[k]
    tr = mesh.trace[k]
    up, lo = mesh[f.upper_key], mesh[f.lower_key]
    nF, nc = f.upper_facets.shape[0], f.num_mortar
    if f.dim == 0:
        if nF != 1 or nc != 1:
            raise SpaceError("a point interface links exactly one facet and one mortar cell")
        return sp.csr_matrix(np.ones((1, 1)))
    frame = lo.geometry.frame
    x0 = lo.nodes[lo.cells[0, 0]]
    fpts = up.nodes[f.upper_facets]  # (F, d+1, n)
    rel = fpts - x0
    off = rel - (rel @ frame) @ frame.T
    if np.abs(off).max() > 1e-10:
        raise SpaceError(f"interface {k}: trace facets are not coplanar with the mortar grid")
    floc = fpts @ frame
    cloc = lo.geometry.local[f.mortar_cells]
    if f.dim == 1:
        fa, fb = floc[:, :, 0].min(axis=1), floc[:, :, 0].max(axis=1)
        ca, cb = cloc[:, :, 0].min(axis=1), cloc[:, :, 0].max(axis=1)
        r, c, v = _interval_overlaps(fa, fb, ca, cb)
        return sp.csr_matrix((v, (r, c)), shape=(nF, nc))
    # d == 2: matching grids by sorted vertex coordinates, otherwise clipping
    fkey, ckey = _triangle_keys(floc), _triangle_keys(cloc)
    if nF == nc:
        fo = np.lexsort(fkey.T[::-1])
        co = np.lexsort(ckey.T[::-1])
        if np.array_equal(fkey[fo], ckey[co]):
            areas = up.geometry.facet_measures[tr.upper_facets][fo]
            return sp.csr_matrix((areas, (fo, co)), shape=(nF, nc))
    if not allow_clipping:
        raise SpaceError(
            f"interface {k}: non-matching 2D mortar grid requires the clipping feature flag"
        )
    rows, cols, vals = [], [], []
    fmin, fmax = floc.min(axis=1), floc.max(axis=1)
    cmin, cmax = cloc.min(axis=1), cloc.max(axis=1)
    for i in range(nF):
        cand = np.flatnonzero(np.all(cmin <= fmax[i] + 1e-14, axis=1) & np.all(cmax >= fmin[i] - 1e-14, axis=1))
        tf = _ccw(floc[i])
        for j in cand:
            area = _polygon_area(_clip(tf, _ccw(cloc[j])))
            if area > 1e-15:
                rows.append(i)
                cols.append(j)
                vals.append(area)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nF, nc))


def mortar_projection(mesh: MixedDimMesh, k: int, allow_clipping: bool = False) -> SparseOperator:
    """L2 projection of piecewise-constant mortar fluxes onto the trace facets.

    Row ``F``: ``(Pi lambda)_F = sum_c |F ∩ c| / |F| * lambda_c``.  The
    facet measure is taken as the row sum of the overlaps (equal to ``|F|``
    on a covering mortar grid), so constants and matching grids are
    reproduced without rounding.
    """
    ov = overlap_matrix(mesh, k, allow_clipping)
    fm = np.asarray(ov.sum(axis=1)).ravel()
    if np.any(fm <= 0):
        raise SpaceError(f"interface {k}: trace facet not covered by the mortar grid")
    return SparseOperator(sp.diags(1.0 / fm) @ ov, f"trace[{k}]", f"mortar[{k}]")


def check_mortar_condition(mesh: MixedDimMesh, k: int, projection: SparseOperator | None = None) -> float:
    """Smallest singular value of the projection in mass-weighted norms."""
    f = mesh.interfaces[k]
    P = (projection or mortar_projection(mesh, k)).matrix
    up, lo = mesh[f.upper_key], mesh[f.lower_key]
    wF = up.geometry.facet_measures[mesh.trace[k].upper_facets]
    wc = lo.geometry.volumes[mesh.trace[k].mortar_cells]
    G = (sp.diags(1 / np.sqrt(wc)) @ P.T @ sp.diags(wF) @ P @ sp.diags(1 / np.sqrt(wc))).toarray()
    ev = np.linalg.eigvalsh(0.5 * (G + G.T))
    return float(np.sqrt(max(ev[0], 0.0)))


# ------------------------------------------------------------------ jump


def jump_operator(mesh: MixedDimMesh, eps_hat: Sequence[np.ndarray], key: Key,
                  layout: DofLayout | None = None) -> SparseOperator:
    """Cellwise jump ``-sum_j eps_hat_j lambda_j`` on subdomain ``key``.

    Columns are the global mortar block when ``layout`` is given, otherwise
    the concatenated mortar cells of the subdomain's own interfaces.
    """
    s = mesh[key]
    rows, cols, vals = [], [], []
    offset = 0
    ks = mesh.interfaces_of(key)
    for k in ks:
        tr = mesh.trace[k]
        m = mesh.interfaces[k].num_mortar
        base = layout.mortar_offset[k] if layout is not None else offset
        rows.append(tr.mortar_cells)
        cols.append(base + np.arange(m))
        vals.append(-np.asarray(eps_hat[k], dtype=float))
        offset += m
    ncol = layout.n_lambda if layout is not None else offset
    if not ks:
        return SparseOperator(sp.csr_matrix((s.num_cells, ncol)), f"pressure{key}", "mortar")
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(s.num_cells, ncol)
    )
    return SparseOperator(M, f"pressure{key}", "mortar")


# ------------------------------------------------------------------ extension


def extension_matrix(
    layout: DofLayout,
    projections: Sequence[SparseOperator] | None = None,
    variant: str = "compact",
    seed: int = 0,
) -> SparseOperator:
    """Discrete extension ``R_h`` from the mortar block into the full flux vector.

    A trace facet ``F`` receives the flux ``|F| (Pi lambda)_F`` through the
    interface normal, which coincides with the global normal of the facet.
    The ``compact`` variant vanishes on all other facets; the ``random``
    variant adds arbitrary values on free facets of the same subdomain and
    serves to check that results only depend on the combined flux.
    """
    mesh = layout.mesh
    if projections is None:
        projections = [mortar_projection(mesh, k) for k in range(len(mesh.interfaces))]
    rows, cols, vals = [], [], []
    for k, f in enumerate(mesh.interfaces):
        up = mesh[f.upper_key]
        fm = up.geometry.facet_measures[layout.flux_trace[k]]
        coo = (sp.diags(fm) @ projections[k].matrix).tocoo()
        rows.append(layout.full_offset[f.upper_key] + layout.flux_trace[k][coo.row])
        cols.append(layout.mortar_offset[k] + coo.col)
        vals.append(coo.data)
        if variant == "random":
            rng = np.random.default_rng([seed, k])
            free = layout.full_offset[f.upper_key] + layout.flux_free[f.upper_key]
            nfree = min(len(free), 4 * f.num_mortar)
            pick = rng.choice(free, size=nfree, replace=False) if nfree else free[:0]
            rows.append(pick)
            cols.append(layout.mortar_offset[k] + rng.integers(0, f.num_mortar, size=nfree))
            vals.append(rng.normal(size=nfree))
        elif variant != "compact":
            raise SpaceError(f"unknown extension variant '{variant}'")
    if rows:
        E = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(layout.n_full, layout.n_lambda),
        )
    else:
        E = sp.csr_matrix((layout.n_full, layout.n_lambda))
    return SparseOperator(E, "flux_full", "mortar")


def trace_values(layout: DofLayout, u_full: np.ndarray, k: int) -> np.ndarray:
    """Normal flux per unit measure through the trace facets of interface ``k``."""
    f = layout.mesh.interfaces[k]
    up = layout.mesh[f.upper_key]
    idx = layout.flux_trace[k]
    return u_full[layout.full_offset[f.upper_key] + idx] / up.geometry.facet_measures[idx]
