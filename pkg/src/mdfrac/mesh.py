"""Mixed-dimensional simplicial meshes.

A :class:`MixedDimMesh` stores flat simplicial subdomains of every dimension
``0 <= d <= n`` together with the codimension-one interfaces that link a
subdomain of dimension ``d`` to the facets of a neighbouring subdomain of
dimension ``d + 1``.  Each interface carries its own mortar grid.

Conventions
-----------
* Subdomains are addressed by the key ``(dim, id)``; ids are 1-based per
  dimension.
* A boundary facet of a subdomain carries exactly one tag out of
  ``dirichlet``, ``neumann``, ``tip`` (immersed fracture end) and
  ``interface``.
* Facets on an interface are boundary facets of the higher-dimensional
  subdomain: both sides of a fracture own their own facets.
* Global facet orientation: boundary facets point outward; an interior facet
  points out of the lower-numbered of its two cells.  With this rule the
  interface normal, which points from the higher- to the lower-dimensional
  side, coincides with the global normal of every trace facet.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial
from typing import Iterable, Iterator

import numpy as np

TAGS = ("dirichlet", "neumann", "tip", "interface")
TAG_CODE = {name: code for code, name in enumerate(TAGS)}
INTERIOR = -1

GEOM_TOL = 1e-12

Key = tuple[int, int]


class MeshError(ValueError):
    """Raised when a mesh violates a structural invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    for c in v:
        if abs(c) > 1e-12:
            return v if c > 0 else -v
    return v


def tangent_frame(nodes: np.ndarray, cells: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis (ambient x dim) of the plane spanned by a flat subdomain.

    The basis only depends on the plane itself (not on the node numbering),
    so it is stable under refinement and serialization.
    """
    n = nodes.shape[1]
    if dim == n:
        return np.eye(n)
    if dim == 0:
        return np.zeros((n, 0))
    a = nodes[cells[0]]
    if dim == 1:
        t = a[1] - a[0]
        return _canonical_sign(t / np.linalg.norm(t))[:, None]
    if dim == 2 and n == 3:
        nrm = np.cross(a[1] - a[0], a[2] - a[0])
        nrm = _canonical_sign(nrm / np.linalg.norm(nrm))
        e = np.zeros(3)
        e[int(np.argmin(np.abs(nrm)))] = 1.0
        e1 = e - (e @ nrm) * nrm
        e1 /= np.linalg.norm(e1)
        return np.stack([e1, np.cross(nrm, e1)], axis=1)
    raise MeshError(f"unsupported embedding: dim={dim} in R^{n}")


def row_keys(rows: np.ndarray, base: int) -> np.ndarray:
    """Encode integer rows as int64 keys whose order is lexicographic."""
    rows = np.asarray(rows, dtype=np.int64)
    keys = np.zeros(rows.shape[0], dtype=np.int64)
    for k in range(rows.shape[1]):
        keys = keys * base + rows[:, k]
    return keys


def lookup_rows(table: np.ndarray, queries: np.ndarray, base: int) -> np.ndarray:
    """Index of every sorted query row in a lexicographically sorted unique table.

    Returns -1 for rows that are absent.
    """
    tk = row_keys(table, base)
    qk = row_keys(np.sort(np.asarray(queries, dtype=np.int64), axis=1), base)
    pos = np.searchsorted(tk, qk)
    pos = np.minimum(pos, max(len(tk) - 1, 0))
    found = len(tk) > 0
    hit = (tk[pos] == qk) if found else np.zeros(len(qk), bool)
    return np.where(hit, pos, -1)


@dataclass(frozen=True)
class SubdomainGeometry:
    """Derived geometric data of a flat simplicial subdomain, in local coordinates."""

    frame: np.ndarray  # (n, d) orthonormal tangent basis
    local: np.ndarray  # (N, d) node coordinates in the frame
    facets: np.ndarray  # (F, d) sorted vertex indices; empty for d == 0
    cell_facets: np.ndarray  # (M, d+1) facet opposite local vertex i
    volumes: np.ndarray  # (M,)
    centroids: np.ndarray  # (M, n)
    grad_bary: np.ndarray  # (M, d+1, d)
    facet_measures: np.ndarray  # (F,)
    facet_centroids: np.ndarray  # (F, n)
    facet_normals: np.ndarray  # (F, d) unit, global orientation
    facet_cells: np.ndarray  # (F, 2) owner first, -1 if absent
    signs: np.ndarray  # (M, d+1) +1 where the cell's outward normal is the global one

    @property
    def boundary(self) -> np.ndarray:
        return self.facet_cells[:, 1] < 0


def _simplex_geometry(nodes: np.ndarray, cells: np.ndarray, dim: int) -> SubdomainGeometry:
    n = nodes.shape[1]
    frame = tangent_frame(nodes, cells, dim)
    local = nodes @ frame
    M = cells.shape[0]
    if dim == 0:
        empty_i = np.zeros((0, 0), dtype=np.int64)
        return SubdomainGeometry(
            frame=frame, local=local, facets=empty_i,
            cell_facets=np.zeros((M, 1), dtype=np.int64),
            volumes=np.ones(M), centroids=nodes[cells[:, 0]].copy(),
            grad_bary=np.zeros((M, 1, 0)), facet_measures=np.zeros(0),
            facet_centroids=np.zeros((0, n)), facet_normals=np.zeros((0, 0)),
            facet_cells=np.zeros((0, 2), dtype=np.int64), signs=np.zeros((M, 1)),
        )

    a = local[cells]  # (M, d+1, d)
    jac = np.transpose(a[:, 1:, :] - a[:, :1, :], (0, 2, 1))  # columns = edges
    det = np.linalg.det(jac)
    volumes = np.abs(det) / factorial(dim)
    if np.any(volumes <= 1e-300):
        raise MeshError("degenerate cell")
    inv = np.linalg.inv(jac)  # rows are gradients of bary coords 1..d
    grad = np.empty((M, dim + 1, dim))
    grad[:, 1:, :] = inv
    grad[:, 0, :] = -inv.sum(axis=1)

    # facet opposite local vertex i
    local_facets = np.stack(
        [np.delete(cells, i, axis=1) for i in range(dim + 1)], axis=1
    )  # (M, d+1, d)
    flat = np.sort(local_facets.reshape(-1, dim), axis=1)
    facets, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    cell_facets = inverse.reshape(M, dim + 1)
    F = facets.shape[0]

    counts = np.bincount(inverse, minlength=F)
    if np.any(counts > 2):
        raise MeshError("non-manifold facet shared by more than two cells")
    owner_cell = np.repeat(np.arange(M), dim + 1)
    order = np.argsort(inverse, kind="stable")  # owner (lowest cell) first
    facet_cells = -np.ones((F, 2), dtype=np.int64)
    first = np.searchsorted(inverse[order], np.arange(F))
    facet_cells[:, 0] = owner_cell[order[first]]
    second = first + 1
    has2 = counts == 2
    facet_cells[has2, 1] = owner_cell[order[second[has2]]]

    gnorm = np.linalg.norm(grad, axis=2)  # |grad lambda_i| = |F_i| / (d |T|)
    outward = -grad / gnorm[:, :, None]
    fm_cell = dim * volumes[:, None] * gnorm
    facet_measures = np.zeros(F)
    facet_measures[cell_facets.reshape(-1)] = fm_cell.reshape(-1)
    if dim == 1:
        facet_measures[:] = 1.0

    facet_normals = np.zeros((F, dim))
    owner_slot = np.zeros(F, dtype=np.int64)
    is_owner = owner_cell[order[first]]
    # local slot of each facet in its owner cell
    for i in range(dim + 1):
        hit = facet_cells[cell_facets[:, i], 0] == np.arange(M)
        owner_slot[cell_facets[hit, i]] = i
    facet_normals[:] = outward[is_owner, owner_slot]
    signs = np.where(
        facet_cells[cell_facets, 0] == np.arange(M)[:, None], 1.0, -1.0
    )

    facet_centroids = nodes[facets].mean(axis=1)
    centroids = nodes[cells].mean(axis=1)
    return SubdomainGeometry(
        frame=frame, local=local, facets=facets, cell_facets=cell_facets,
        volumes=volumes, centroids=centroids, grad_bary=grad,
        facet_measures=facet_measures, facet_centroids=facet_centroids,
        facet_normals=facet_normals, facet_cells=facet_cells, signs=signs,
    )


@dataclass(frozen=True, eq=False)
class Subdomain:
    """A flat, simplicial, open subdomain of dimension ``dim``."""

    dim: int
    id: int
    nodes: np.ndarray
    cells: np.ndarray
    facet_tags: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 2:
            raise MeshError("nodes must be a 2-d array")
        cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, self.dim + 1)
        tags = {}
        for name in TAGS:
            rows = np.asarray(self.facet_tags.get(name, []), dtype=np.int64)
            tags[name] = _frozen(rows.reshape(-1, max(self.dim, 1)) if self.dim else rows.reshape(0, 0))
        unknown = set(self.facet_tags) - set(TAGS)
        if unknown:
            raise MeshError(f"unknown facet tags {sorted(unknown)}")
        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "cells", _frozen(cells))
        object.__setattr__(self, "facet_tags", tags)

    @property
    def key(self) -> Key:
        return (self.dim, self.id)

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @cached_property
    def geometry(self) -> SubdomainGeometry:
        return _simplex_geometry(self.nodes, self.cells, self.dim)

    @property
    def num_facets(self) -> int:
        return self.geometry.facets.shape[0]

    @cached_property
    def facet_tag_codes(self) -> np.ndarray:
        """Per facet tag code (``INTERIOR`` for interior facets)."""
        codes = np.full(self.num_facets, INTERIOR, dtype=np.int64)
        if self.dim == 0:
            return codes
        g = self.geometry
        base = self.nodes.shape[0]
        for name, rows in self.facet_tags.items():
            if rows.size == 0:
                continue
            idx = lookup_rows(g.facets, rows, base)
            if np.any(idx < 0):
                raise MeshError(f"subdomain {self.key}: '{name}' tag on a non-facet")
            if np.any(codes[idx] != INTERIOR):
                raise MeshError(f"subdomain {self.key}: facet tagged twice")
            codes[idx] = TAG_CODE[name]
        return _frozen(codes)

    def facets_with_tag(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.facet_tag_codes == TAG_CODE[name])

    @property
    def measure(self) -> float:
        return float(self.geometry.volumes.sum())

    def cell_index(self, rows: np.ndarray) -> np.ndarray:
        table = np.sort(self.cells, axis=1)
        order = np.lexsort(table.T[::-1])
        idx = lookup_rows(table[order], rows, self.nodes.shape[0])
        return np.where(idx >= 0, order[np.maximum(idx, 0)], -1)


@dataclass(frozen=True, eq=False)
class Interface:
    """Interface between side ``side`` of a lower subdomain and an upper one.

    ``upper_facets`` are vertex lists in the upper subdomain's numbering and
    ``mortar_cells`` vertex lists in the lower subdomain's numbering (the
    mortar grid matches the lower-dimensional mesh).  ``normal_sign`` is the
    sign of the interface normal relative to the reference normal of the
    lower subdomain when it has codimension one in the ambient space, and
    ``+1`` otherwise.
    """

    dim: int
    lower_id: int
    side: int
    upper_id: int
    upper_facets: np.ndarray
    mortar_cells: np.ndarray
    normal_sign: int = 1

    def __post_init__(self) -> None:
        uf = np.asarray(self.upper_facets, dtype=np.int64).reshape(-1, self.dim + 1)
        mc = np.asarray(self.mortar_cells, dtype=np.int64).reshape(-1, self.dim + 1)
        object.__setattr__(self, "upper_facets", _frozen(uf))
        object.__setattr__(self, "mortar_cells", _frozen(mc))
        object.__setattr__(self, "normal_sign", int(self.normal_sign))

    @property
    def lower_key(self) -> Key:
        return (self.dim, self.lower_id)

    @property
    def upper_key(self) -> Key:
        return (self.dim + 1, self.upper_id)

    @property
    def num_mortar(self) -> int:
        return self.mortar_cells.shape[0]


@dataclass(frozen=True)
class ParentMap:
    """Links a refined subdomain to its parent level."""

    cell_parent: np.ndarray  # (M_child,)
    facet_parent: np.ndarray  # (F_child,) -1 for facets interior to a parent cell
    facet_sign: np.ndarray  # (F_child,) orientation relative to the parent facet


@dataclass(eq=False)
class MixedDimMesh:
    """The dimensional hierarchy of subdomains, interfaces and mortar grids."""

    ambient_dim: int
    subdomains: list[Subdomain]
    interfaces: list[Interface]
    refinement_level: int = 0
    tips: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    name: str = ""
    parents: dict[Key, ParentMap] | None = None

    def __post_init__(self) -> None:
        self.subdomains = sorted(self.subdomains, key=lambda s: (-s.dim, s.id))
        self.interfaces = sorted(
            self.interfaces, key=lambda f: (-f.dim, f.lower_id, f.side)
        )
        self.tips = np.asarray(self.tips, dtype=float).reshape(-1, self.ambient_dim)
        self._index = {s.key: s for s in self.subdomains}
        if len(self._index) != len(self.subdomains):
            raise MeshError("duplicate subdomain key")

    def __getitem__(self, key: Key) -> Subdomain:
        return self._index[key]

    def __iter__(self) -> Iterator[Subdomain]:
        return iter(self.subdomains)

    def by_dim(self, d: int) -> list[Subdomain]:
        return [s for s in self.subdomains if s.dim == d]

    def counts(self) -> dict[int, int]:
        """Number of subdomains per dimension, ``N^d``."""
        return {d: len(self.by_dim(d)) for d in range(self.ambient_dim, -1, -1)}

    def interfaces_of(self, key: Key) -> list[int]:
        """Indices of the interfaces whose lower subdomain is ``key``."""
        return [k for k, f in enumerate(self.interfaces) if f.lower_key == key]

    @cached_property
    def trace(self) -> list["InterfaceTrace"]:
        return [InterfaceTrace.build(self, f) for f in self.interfaces]


@dataclass(frozen=True)
class InterfaceTrace:
    """Index maps of an interface into its two subdomains."""

    upper_facets: np.ndarray  # facet indices of the upper subdomain
    mortar_cells: np.ndarray  # cell indices of the lower subdomain
    normals: np.ndarray  # (m, n) interface normal per mortar cell

    @classmethod
    def build(cls, mesh: MixedDimMesh, f: Interface) -> "InterfaceTrace":
        up = mesh[f.upper_key]
        lo = mesh[f.lower_key]
        ug = up.geometry
        uf = lookup_rows(ug.facets, f.upper_facets, up.nodes.shape[0])
        if np.any(uf < 0):
            raise MeshError(f"interface {f.lower_key}/{f.side}: unknown upper facet")
        if f.dim == 0:
            mc = np.zeros(f.num_mortar, dtype=np.int64)
        else:
            mc = lo.cell_index(f.mortar_cells)
            if np.any(mc < 0):
                raise MeshError(f"interface {f.lower_key}/{f.side}: mortar/lower-dim grid mismatch")
        nu = ug.frame @ ug.facet_normals[uf[0]]
        normals = np.repeat(nu[None, :], f.num_mortar, axis=0)
        return cls(_frozen(uf), _frozen(mc), _frozen(normals))


# ----------------------------------------------------------------- validation


def validate_mesh(mesh: MixedDimMesh) -> None:
    """Check the structural invariants of a mixed-dimensional mesh.

    Raises :class:`MeshError` listing every violation found.
    """
    problems: list[str] = []
    n = mesh.ambient_dim
    covered: dict[Key, np.ndarray] = {}
    for s in mesh:
        if s.nodes.shape[1] != n:
            problems.append(f"{s.key}: nodes not in R^{n}")
            continue
        g = s.geometry
        if s.dim not in (0, n):
            off = (s.nodes - s.nodes[s.cells[0, 0]]) - (
                (s.nodes - s.nodes[s.cells[0, 0]]) @ g.frame @ g.frame.T
            )
            if np.abs(off).max() > 1e-10:
                problems.append(f"{s.key}: subdomain is not flat")
        if s.dim == 0:
            continue
        codes = s.facet_tag_codes
        bnd = g.boundary
        if np.any(codes[bnd] == INTERIOR):
            problems.append(f"{s.key}: untagged boundary facet")
        if np.any(codes[~bnd] != INTERIOR):
            problems.append(f"{s.key}: tagged interior facet")
        if s.dim == n and not np.any(codes == TAG_CODE["dirichlet"]):
            problems.append(f"{s.key}: empty Dirichlet boundary")
        covered[s.key] = np.zeros(s.num_facets, dtype=np.int64)

    for s in mesh:
        if s.dim < n and not mesh.interfaces_of(s.key):
            problems.append(f"{s.key}: no adjacent interface")

    for f, tr in zip(mesh.interfaces, _safe_traces(mesh, problems)):
        if tr is None:
            continue
        lo, up = mesh[f.lower_key], mesh[f.upper_key]
        name = f"interface {f.lower_key}/side {f.side}"
        covered[up.key][tr.upper_facets] += 1
        lo_measure = lo.measure
        mortar_measure = lo.geometry.volumes[tr.mortar_cells].sum()
        trace_measure = up.geometry.facet_measures[tr.upper_facets].sum()
        if abs(mortar_measure - lo_measure) > 1e-12 * max(lo_measure, 1.0):
            problems.append(f"{name}: mortar grid does not cover the subdomain")
        if abs(trace_measure - lo_measure) > 1e-12 * max(lo_measure, 1.0):
            problems.append(f"{name}: trace facets do not cover the subdomain")
        if np.any(up.facet_tag_codes[tr.upper_facets] != TAG_CODE["interface"]):
            problems.append(f"{name}: trace facet not tagged 'interface'")
        dist = _distance_to_subdomain(lo, up.nodes[np.unique(f.upper_facets)])
        if dist.max() > GEOM_TOL:
            problems.append(f"{name}: trace facets leave the lower subdomain ({dist.max():.2e})")
        ug = up.geometry
        nus = ug.facet_normals[tr.upper_facets] @ ug.frame.T
        if np.abs(nus - nus[0]).max() > 1e-10:
            problems.append(f"{name}: interface is not flat on this side")
        cells = ug.facet_cells[tr.upper_facets, 0]
        gap = ug.facet_centroids[tr.upper_facets] - ug.centroids[cells]
        if np.any(np.einsum("ij,ij->i", gap, nus) <= 0):
            problems.append(f"{name}: normal does not point towards the lower subdomain")
    for key, c in covered.items():
        s = mesh[key]
        iface = s.facet_tag_codes == TAG_CODE["interface"]
        if np.any(c[iface] != 1) or np.any(c[~iface] != 0):
            problems.append(f"{key}: interface facets not covered exactly once")
    if problems:
        raise MeshError("; ".join(problems))


def _safe_traces(mesh: MixedDimMesh, problems: list[str]) -> list[InterfaceTrace | None]:
    out = []
    for f in mesh.interfaces:
        try:
            out.append(InterfaceTrace.build(mesh, f))
        except (MeshError, KeyError) as err:
            problems.append(str(err))
            out.append(None)
    return out


def _distance_to_subdomain(s: Subdomain, pts: np.ndarray) -> np.ndarray:
    """Distance from points to a flat subdomain of dimension 0, 1 or 2."""
    g = s.geometry
    x0 = s.nodes[s.cells[0, 0]]
    rel = pts - x0
    normal_dist = np.linalg.norm(rel - (rel @ g.frame) @ g.frame.T, axis=1)
    loc = pts @ g.frame
    if s.dim == 0:
        return normal_dist
    best = np.full(len(pts), np.inf)
    a = g.local[s.cells]
    for m in range(s.num_cells):
        best = np.minimum(best, _point_simplex_distance(loc, a[m]))
    return np.hypot(normal_dist, best)


def _point_simplex_distance(p: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` (k, d) to a d-simplex with vertices ``a`` (d+1, d)."""
    d = a.shape[1]
    if d == 1:
        lo, hi = np.sort(a[:, 0])
        t = p[:, 0]
        return np.maximum(np.maximum(lo - t, t - hi), 0.0)
    # d == 2: inside test, else distance to edges
    jac = (a[1:] - a[0]).T
    lam = np.linalg.solve(jac, (p - a[0]).T).T
    inside = (lam >= -1e-14).all(axis=1) & (lam.sum(axis=1) <= 1 + 1e-14)
    dist = np.full(len(p), np.inf)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        e = a[j] - a[i]
        t = np.clip((p - a[i]) @ e / (e @ e), 0.0, 1.0)
        dist = np.minimum(dist, np.linalg.norm(p - a[i] - t[:, None] * e, axis=1))
    return np.where(inside, 0.0, dist)


def point_simplex_distance(p: np.ndarray, vertices: np.ndarray) -> float:
    """Euclidean distance from ``p`` to the simplex spanned by ``vertices`` (k, n)."""
    from scipy.optimize import nnls

    k = vertices.shape[0]
    w = 1e6
    A = np.vstack([vertices.T, w * np.ones((1, k))])
    b = np.concatenate([p, [w]])
    lam, _ = nnls(A, b)
    return float(np.linalg.norm(vertices.T @ lam - p))


# ----------------------------------------------------------------- refinement


def _edges(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d1 = cells.shape[1]
    pairs = [(i, j) for i in range(d1) for j in range(i + 1, d1)]
    e = np.stack([np.sort(cells[:, [i, j]], axis=1) for i, j in pairs], axis=1)
    edges, inv = np.unique(e.reshape(-1, 2), axis=0, return_inverse=True)
    return edges, inv.reshape(cells.shape[0], len(pairs))


def _refine_cells(nodes: np.ndarray, cells: np.ndarray, dim: int):
    """Uniform red refinement; returns nodes, cells, parent, midpoint lookup."""
    if dim == 0:
        return nodes, cells, np.arange(cells.shape[0]), None
    edges, cell_edges = _edges(cells)
    N = nodes.shape[0]
    mid = N + np.arange(edges.shape[0])
    new_nodes = np.vstack([nodes, 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])])
    m = mid[cell_edges]
    c = cells
    if dim == 1:
        kids = [np.stack([c[:, 0], m[:, 0]], 1), np.stack([m[:, 0], c[:, 1]], 1)]
    elif dim == 2:
        # edge slots: (0,1)->0, (0,2)->1, (1,2)->2
        m01, m02, m12 = m[:, 0], m[:, 1], m[:, 2]
        kids = [
            np.stack([c[:, 0], m01, m02], 1),
            np.stack([m01, c[:, 1], m12], 1),
            np.stack([m02, m12, c[:, 2]], 1),
            np.stack([m01, m12, m02], 1),
        ]
    elif dim == 3:
        # edge slots: (0,1)0 (0,2)1 (0,3)2 (1,2)3 (1,3)4 (2,3)5
        x0, x1, x2, x3 = c.T
        m01, m02, m03, m12, m13, m23 = m.T
        kids = [
            np.stack([x0, m01, m02, m03], 1),
            np.stack([m01, x1, m12, m13], 1),
            np.stack([m02, m12, x2, m23], 1),
            np.stack([m03, m13, m23, x3], 1),
            np.stack([m01, m02, m03, m13], 1),
            np.stack([m01, m02, m12, m13], 1),
            np.stack([m02, m03, m13, m23], 1),
            np.stack([m02, m12, m13, m23], 1),
        ]
    else:
        raise MeshError(f"cannot refine dimension {dim}")
    nk = len(kids)
    new_cells = np.stack(kids, axis=1).reshape(-1, dim + 1)
    parent = np.repeat(np.arange(cells.shape[0]), nk)

    def midpoint(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        q = np.sort(np.stack([a, b], 1), axis=1)
        idx = lookup_rows(edges, q, N)
        return mid[idx]

    return new_nodes, new_cells, parent, midpoint


def _child_facets(parent_facets: np.ndarray, dim: int, midpoint) -> list[np.ndarray]:
    """Children (vertex rows) of each parent facet, one array per child slot."""
    f = parent_facets
    if dim == 1:
        return [f]
    if dim == 2:
        m = midpoint(f[:, 0], f[:, 1])
        return [np.stack([f[:, 0], m], 1), np.stack([m, f[:, 1]], 1)]
    a, b, c = f.T
    mab, mac, mbc = midpoint(a, b), midpoint(a, c), midpoint(b, c)
    return [
        np.stack([a, mab, mac], 1),
        np.stack([b, mab, mbc], 1),
        np.stack([c, mac, mbc], 1),
        np.stack([mab, mbc, mac], 1),
    ]


def refine(mesh: MixedDimMesh) -> MixedDimMesh:
    """Uniform red refinement of every subdomain and mortar grid.

    Each d-simplex is split into ``2**d`` children.  Node numbering of the
    parent level is preserved, so non-matching offsets between the two
    sides of a fracture survive refinement.  Parent maps are stored in
    ``mesh.parents`` of the returned mesh.
    """
    new_subs: list[Subdomain] = []
    parents: dict[Key, ParentMap] = {}
    midpoints = {}
    children_of_facet: dict[Key, list[np.ndarray]] = {}
    children_of_cell: dict[Key, np.ndarray] = {}
    for s in mesh:
        nodes, cells, parent, midpoint = _refine_cells(s.nodes, s.cells, s.dim)
        midpoints[s.key] = midpoint
        tags = {}
        for name, rows in s.facet_tags.items():
            if rows.size == 0 or s.dim == 0:
                tags[name] = rows
                continue
            tags[name] = np.concatenate(_child_facets(rows, s.dim, midpoint))
        child = Subdomain(s.dim, s.id, nodes, cells, tags)
        new_subs.append(child)
        nk = 2 ** s.dim
        children_of_cell[s.key] = np.arange(cells.shape[0]).reshape(-1, nk)
        if s.dim == 0:
            parents[s.key] = ParentMap(parent, np.zeros(0, np.int64), np.zeros(0))
            continue
        pg, cg = s.geometry, child.geometry
        kids = _child_facets(pg.facets, s.dim, midpoint)
        facet_parent = -np.ones(child.num_facets, dtype=np.int64)
        facet_sign = np.zeros(child.num_facets)
        slots = []
        for rows in kids:
            idx = lookup_rows(cg.facets, rows, nodes.shape[0])
            if np.any(idx < 0):
                raise MeshError("refinement lost a facet")
            facet_parent[idx] = np.arange(pg.facets.shape[0])
            facet_sign[idx] = np.sign(
                np.einsum("ij,ij->i", cg.facet_normals[idx], pg.facet_normals)
            )
            slots.append(idx)
        children_of_facet[s.key] = slots
        parents[s.key] = ParentMap(parent, facet_parent, facet_sign)

    new_ifaces = []
    for f in mesh.interfaces:
        lo_key, up_key = f.lower_key, f.upper_key
        uf = np.concatenate(
            _child_facets(f.upper_facets, f.dim + 1, midpoints[up_key])
        ) if f.dim + 1 > 1 else f.upper_facets
        if f.dim + 1 > 1:
            # keep children grouped per parent facet
            k = len(_child_facets(f.upper_facets[:1], f.dim + 1, midpoints[up_key]))
            uf = uf.reshape(k, -1, f.dim + 1).transpose(1, 0, 2).reshape(-1, f.dim + 1)
        if f.dim == 0:
            mc = f.mortar_cells
        else:
            lo = mesh[lo_key]
            mc_idx = lo.cell_index(f.mortar_cells)
            child_lo = next(c for c in new_subs if c.key == lo_key)
            mc = child_lo.cells[children_of_cell[lo_key][mc_idx].reshape(-1)]
        new_ifaces.append(
            Interface(f.dim, f.lower_id, f.side, f.upper_id, uf, mc, f.normal_sign)
        )
    return MixedDimMesh(
        mesh.ambient_dim, new_subs, new_ifaces, mesh.refinement_level + 1,
        mesh.tips, mesh.name, parents,
    )


def refine_family(mesh: MixedDimMesh, levels: int) -> list[MixedDimMesh]:
    """``[mesh, refine(mesh), ...]`` with ``levels + 1`` members."""
    family = [mesh]
    for _ in range(levels):
        family.append(refine(family[-1]))
    return family


# ------------------------------------------------------------------- json io


def mesh_to_dict(mesh: MixedDimMesh) -> dict:
    subs = []
    for s in mesh:
        tags = {name: s.facet_tags[name].tolist() for name in TAGS if s.facet_tags[name].size}
        subs.append({
            "dim": s.dim, "id": s.id, "vertices": s.nodes.tolist(),
            "cells": s.cells.tolist(), "facet_tags": tags,
        })
    ifaces = [{
        "dim": f.dim, "lower_id": f.lower_id, "side": f.side,
        "upper_id": f.upper_id, "upper_facets": f.upper_facets.tolist(),
        "mortar_cells": f.mortar_cells.tolist(), "normal_sign": f.normal_sign,
    } for f in mesh.interfaces]
    return {
        "ambient_dim": mesh.ambient_dim,
        "subdomains": subs,
        "interfaces": ifaces,
        "refinement_level": mesh.refinement_level,
        "tips": mesh.tips.tolist(),
        "name": mesh.name,
    }


def mesh_from_dict(doc: dict) -> MixedDimMesh:
    n = int(doc["ambient_dim"])
    subs = []
    for s in doc["subdomains"]:
        d = int(s["dim"])
        subs.append(Subdomain(
            d, int(s["id"]), np.asarray(s["vertices"], dtype=float).reshape(-1, n),
            np.asarray(s["cells"], dtype=np.int64).reshape(-1, d + 1),
            {k: np.asarray(v, dtype=np.int64) for k, v in s.get("facet_tags", {}).items()},
        ))
    ifaces = [Interface(
        int(f["dim"]), int(f["lower_id"]), int(f["side"]), int(f["upper_id"]),
        f["upper_facets"], f["mortar_cells"], int(f.get("normal_sign", 1)),
    ) for f in doc["interfaces"]]
    return MixedDimMesh(
        n, subs, ifaces, int(doc.get("refinement_level", 0)),
        np.asarray(doc.get("tips", []), dtype=float), doc.get("name", ""),
    )


def dumps_mesh(mesh: MixedDimMesh) -> str:
    return json.dumps(mesh_to_dict(mesh), separators=(",", ":"))


def save_mesh(mesh: MixedDimMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_mesh(mesh))


def load_mesh(path) -> MixedDimMesh:
    with open(path) as fh:
        return mesh_from_dict(json.load(fh))


def iter_keys(mesh: MixedDimMesh, dims: Iterable[int] | None = None) -> list[Key]:
    wanted = set(dims) if dims is not None else None
    return [s.key for s in mesh if wanted is None or s.dim in wanted]
