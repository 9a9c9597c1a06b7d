"""Benchmark geometries and their parameter tables.

Presets
-------
``unfractured-2d``
    Unit square split into two triangles, Dirichlet data on top and bottom.
``single-fracture-2d``
    Unit square cut by the vertical fracture ``x1 = 0.5``; pressure drop
    from left to right.
``square2d``
    Unit square with seven line fractures: five conducting branches meeting
    at ``(0.5, 0.75)``, a blocking segment at ``x2 = 0.3`` and a horizontal
    fracture that pinches out at ``(0.5, 0.5)``.  The horizontal fracture is
    crossed by the branch ending in ``(0.75, 0)``; the crossing point is a
    second point subdomain.
``cube3d``
    Unit cube cut by the planes ``x_i = 0.5`` into 8 cubes, 12 quarter
    planes, 6 half lines and the centre point, with matching grids.

Two-dimensional presets are meshed by a constrained Delaunay triangulation,
after which fracture nodes are duplicated once per side and the interior
fracture nodes of each side are shifted tangentially with a per-side seed.
The lower-dimensional (and mortar) grid keeps every second unperturbed
fracture node, so it is coarser than both traces.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable, Sequence

import numpy as np

from .mesh import (
    Interface, MeshError, MixedDimMesh, Subdomain, _canonical_sign, refine,
)
from .scaling import FeatureParams, ParameterTable

PRESETS = ("square2d", "cube3d", "single-fracture-2d", "unfractured-2d")
MAX_LEVEL = {2: 6, 3: 4}
COORD_DIGITS = 12

PINCH_GAMMA = "0.01*max(2*(x1 - 0.5), 0)**4"


class PresetError(ValueError):
    """Unknown preset or refinement level beyond the memory budget."""


# ------------------------------------------------------------ boundary data


def _on(x: np.ndarray, k: int, value: float) -> np.ndarray:
    return np.abs(x[:, k] - value) < 1e-12


def top_bottom(x: np.ndarray) -> np.ndarray:
    return _on(x, x.shape[1] - 1, 0.0) | _on(x, x.shape[1] - 1, 1.0)


def left_right(x: np.ndarray) -> np.ndarray:
    return _on(x, 0, 0.0) | _on(x, 0, 1.0)


def everywhere(x: np.ndarray) -> np.ndarray:
    return np.ones(x.shape[0], dtype=bool)


# ------------------------------------------------------------ 2d networks


@dataclass(frozen=True)
class Fracture2D:
    id: int
    start: tuple[float, float]
    end: tuple[float, float]
    breaks: tuple[tuple[float, float], ...] = ()  # interior nodes kept connected


@dataclass(frozen=True)
class Network2D:
    """Line fractures in the unit square plus the point subdomains joining them."""

    fractures: tuple[Fracture2D, ...]
    points: tuple[tuple[float, float], ...] = ()
    dirichlet: Callable[[np.ndarray], np.ndarray] = top_bottom
    pinch_points: tuple[tuple[float, float], ...] = ()
    name: str = ""


def _key(x) -> tuple[float, float]:
    return tuple(np.round(np.asarray(x, dtype=float), COORD_DIGITS) + 0.0)


def _on_segment(p, a, b) -> float | None:
    """Parameter of ``p`` on segment ``ab`` if ``p`` lies on it, else ``None``."""
    p, a, b = map(np.asarray, (p, a, b))
    t = float((p - a) @ (b - a) / ((b - a) @ (b - a)))
    if -1e-12 <= t <= 1 + 1e-12 and np.linalg.norm(a + t * (b - a) - p) < 1e-12:
        return min(max(t, 0.0), 1.0)
    return None


def _on_box_boundary(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return np.any((np.abs(x) < 1e-12) | (np.abs(x - 1) < 1e-12), axis=1)


@dataclass
class _Chunk:
    fid: int
    a: np.ndarray
    b: np.ndarray
    nodes: list[int] = field(default_factory=list)  # PSLG vertex ids along the chunk


def mesh_network_2d(
    net: Network2D, h: float, trace_h: float, seed: int = 0, matching: bool = False,
    jitter: float = 0.3,
) -> MixedDimMesh:
    """Mesh a 2D fracture network at refinement level 0.

    ``h`` bounds the matrix edge length, ``trace_h`` the length of the
    matrix facets along fractures.  With ``matching=True`` both traces and
    the mortar grid coincide.
    """
    import triangle

    coarsen = 1 if matching else 2
    verts: list[np.ndarray] = []
    vid: dict[tuple, int] = {}

    def vertex(x) -> int:
        k = _key(x)
        if k not in vid:
            vid[k] = len(verts)
            verts.append(np.array(x, dtype=float))
        return vid[k]

    point_keys = {_key(p): i + 1 for i, p in enumerate(net.points)}
    chunks: list[_Chunk] = []
    for fr in net.fractures:
        a, b = np.asarray(fr.start, float), np.asarray(fr.end, float)
        ts = {0.0, 1.0}
        for p in list(net.points) + list(fr.breaks):
            t = _on_segment(p, a, b)
            if t is not None:
                ts.add(round(t, 14))
        ts = sorted(ts)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            p0, p1 = a + t0 * (b - a), a + t1 * (b - a)
            # snap exact break coordinates
            p0 = _snap(p0, net, fr)
            p1 = _snap(p1, net, fr)
            length = np.linalg.norm(p1 - p0)
            m = max(2, 2 * int(np.ceil(length / (2 * trace_h) - 1e-9)))
            ch = _Chunk(fr.id, p0, p1)
            for k in range(m + 1):
                ch.nodes.append(vertex(p0 + (k / m) * (p1 - p0)))
            chunks.append(ch)

    segments = [(c.nodes[k], c.nodes[k + 1]) for c in chunks for k in range(len(c.nodes) - 1)]
    frac_edges = {tuple(sorted(e)) for e in segments}
    corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    for c in corners:
        vertex(c)
    for k in range(4):
        a, b = np.array(corners[k]), np.array(corners[(k + 1) % 4])
        on = []
        for key, i in list(vid.items()):
            t = _on_segment(np.array(key), a, b)
            if t is not None:
                on.append((t, i))
        on.sort()
        for (t0, i0), (t1, i1) in zip(on[:-1], on[1:]):
            m = max(1, int(np.ceil((t1 - t0) / h - 1e-9)))
            prev = i0
            for j in range(1, m):
                cur = vertex(a + (t0 + (t1 - t0) * j / m) * (b - a))
                segments.append((prev, cur))
                prev = cur
            segments.append((prev, i1))

    pslg = {"vertices": np.array(verts), "segments": np.array(segments, dtype=np.int32)}
    tri = triangle.triangulate(pslg, f"pq28a{0.5 * h * h:.12f}Y")
    nodes = np.array(tri["vertices"], dtype=float)
    if not np.allclose(nodes[: len(verts)], np.array(verts), atol=1e-14):
        raise MeshError("triangulation reordered input vertices")
    nodes[: len(verts)] = np.array(verts)
    cells = np.array(tri["triangles"], dtype=np.int64)
    area = _signed_area(nodes, cells)
    cells[area < 0] = cells[area < 0][:, [0, 2, 1]]

    # adjacency of fracture edges before duplication
    edge_tris: dict[tuple[int, int], list[int]] = {}
    for t, c in enumerate(cells):
        for i, j in ((0, 1), (1, 2), (2, 0)):
            e = (min(c[i], c[j]), max(c[i], c[j]))
            if e in frac_edges:
                edge_tris.setdefault(e, []).append(t)
    if any(len(v) != 2 for v in edge_tris.values()) or len(edge_tris) != len(frac_edges):
        raise MeshError("fracture edge is not shared by two triangles")

    cells, nodes = _duplicate_fracture_nodes(nodes, cells, frac_edges)

    # per chunk and side: node copies along the chunk and the trace edges
    tangent = {}
    for fr in net.fractures:
        t = np.asarray(fr.end, float) - np.asarray(fr.start, float)
        tangent[fr.id] = _canonical_sign(t / np.linalg.norm(t))
    side_nodes: dict[tuple[int, int], list[int]] = {}
    side_edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for ci, ch in enumerate(chunks):
        t = tangent[ch.fid]
        nref = np.array([-t[1], t[0]])
        copies = {+1: [None] * len(ch.nodes), -1: [None] * len(ch.nodes)}
        for k in range(len(ch.nodes) - 1):
            a0, b0 = ch.nodes[k], ch.nodes[k + 1]
            for tt in edge_tris[(min(a0, b0), max(a0, b0))]:
                cen = nodes[cells[tt]].mean(axis=0)
                side = 1 if (cen - nodes[a0]) @ nref > 0 else -1
                # locate copies of a0/b0 in the (renumbered) triangle
                c = cells[tt]
                pa = _copy_in(c, nodes, nodes[a0])
                pb = _copy_in(c, nodes, nodes[b0])
                copies[side][k] = pa
                copies[side][k + 1] = pb
                side_edges.setdefault((ch.fid, side), []).append((pa, pb))
        for side in (1, -1):
            side_nodes[(ci, side)] = copies[side]

    unperturbed = nodes.copy()
    if not matching and jitter > 0:
        _jitter_sides(nodes, cells, chunks, side_nodes, seed, jitter)

    area = _signed_area(nodes, cells)
    if np.any(area <= 0):
        raise MeshError("inverted triangle after side perturbation")

    # matrix facet tags
    matrix_edges = np.sort(
        np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]]), axis=1
    )
    uniq, counts = np.unique(matrix_edges, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    iface_set = {tuple(sorted(e)) for es in side_edges.values() for e in es}
    is_iface = np.array([tuple(e) in iface_set for e in bnd], dtype=bool)
    outer = bnd[~is_iface]
    mid = nodes[outer].mean(axis=1)
    dir_mask = net.dirichlet(mid)
    matrix = Subdomain(2, 1, nodes, cells, {
        "dirichlet": outer[dir_mask], "neumann": outer[~dir_mask],
        "interface": bnd[is_iface],
    })

    subdomains = [matrix]
    interfaces = []
    tips = [np.asarray(p, float) for p in net.pinch_points]
    for fr in net.fractures:
        fchunks = [(ci, ch) for ci, ch in enumerate(chunks) if ch.fid == fr.id]
        fnodes: list[np.ndarray] = []
        fid_of: dict[tuple, int] = {}
        fcells = []
        ends = []
        for ci, ch in fchunks:
            pos = unperturbed[ch.nodes][::coarsen]
            idx = []
            for k, x in enumerate(pos):
                key = _key(x)
                at_end = k in (0, len(pos) - 1)
                if at_end and key in point_keys:
                    key = key + (ci,)  # chunk ends at intersections stay separate
                if key not in fid_of:
                    fid_of[key] = len(fnodes)
                    fnodes.append(np.array(x))
                idx.append(fid_of[key])
            fcells += [(idx[k], idx[k + 1]) for k in range(len(idx) - 1)]
            ends += [idx[0], idx[-1]]
        fnodes_arr = np.array(fnodes)
        use = np.bincount(np.array(fcells).ravel(), minlength=len(fnodes))
        tags = {"dirichlet": [], "neumann": [], "tip": [], "interface": []}
        point_links = []
        for v in sorted(set(ends)):
            if use[v] != 1:
                continue
            x = fnodes_arr[v]
            if _key(x) in point_keys:
                tags["interface"].append([v])
                point_links.append((point_keys[_key(x)], v))
            elif _on_box_boundary(x)[0]:
                tags["dirichlet" if net.dirichlet(x[None])[0] else "neumann"].append([v])
            else:
                tags["tip"].append([v])
                tips.append(x)
        frac = Subdomain(1, fr.id, fnodes_arr, np.array(fcells), tags)
        subdomains.append(frac)
        for side in (1, -1):
            interfaces.append(Interface(
                1, fr.id, side, 1, np.array(side_edges[(fr.id, side)]),
                np.array(fcells), normal_sign=-side,
            ))
        for pid, v in point_links:
            interfaces.append(Interface(0, pid, 0, fr.id, [[v]], [[0]]))

    for i, p in enumerate(net.points):
        subdomains.append(Subdomain(0, i + 1, np.array([p], float), [[0]]))
    # number point sides 1..J in a deterministic order
    renumbered = []
    counter: dict[int, int] = {}
    for f in sorted(interfaces, key=lambda f: (f.dim, f.lower_id, f.upper_id, f.upper_facets[0, 0])):
        if f.dim == 0:
            counter[f.lower_id] = counter.get(f.lower_id, 0) + 1
            f = Interface(0, f.lower_id, counter[f.lower_id], f.upper_id, f.upper_facets, f.mortar_cells)
        renumbered.append(f)
    return MixedDimMesh(2, subdomains, renumbered, 0, np.array(tips).reshape(-1, 2), net.name)


def _snap(p: np.ndarray, net: Network2D, fr: Fracture2D) -> np.ndarray:
    for q in list(net.points) + list(fr.breaks) + [fr.start, fr.end]:
        if np.linalg.norm(p - np.asarray(q)) < 1e-10:
            return np.asarray(q, dtype=float)
    return p


def _signed_area(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    a, b, c = nodes[cells[:, 0]], nodes[cells[:, 1]], nodes[cells[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _copy_in(cell: np.ndarray, nodes: np.ndarray, x: np.ndarray) -> int:
    for v in cell:
        if np.array_equal(nodes[v], x):
            return int(v)
    raise MeshError("fracture node copy not found")


def _duplicate_fracture_nodes(nodes, cells, frac_edges):
    """Give every sector around a fracture node its own copy of the node.

    Triangles around a node are in the same sector when they are connected
    through edges that are not fracture edges.
    """
    cells = cells.copy()
    frac_nodes = sorted({v for e in frac_edges for v in e})
    node_cells: dict[int, list[int]] = {v: [] for v in frac_nodes}
    for t, c in enumerate(cells):
        for v in c:
            if v in node_cells:
                node_cells[v].append(t)
    new_nodes = [nodes]
    next_id = nodes.shape[0]
    for v in frac_nodes:
        tris = node_cells[v]
        parent = {t: t for t in tris}

        def find(t):
            while parent[t] != t:
                parent[t] = parent[parent[t]]
                t = parent[t]
            return t

        by_edge: dict[int, list[int]] = {}
        for t in tris:
            for w in cells[t]:
                if w != v and (min(v, w), max(v, w)) not in frac_edges:
                    by_edge.setdefault(int(w), []).append(t)
        for ts in by_edge.values():
            for t in ts[1:]:
                parent[find(t)] = find(ts[0])
        groups: dict[int, list[int]] = {}
        for t in tris:
            groups.setdefault(find(t), []).append(t)
        ordered = sorted(groups.values(), key=min)
        for g in ordered[1:]:
            new_nodes.append(nodes[v][None, :])
            for t in g:
                cells[t][cells[t] == v] = next_id
            next_id += 1
    return cells, np.vstack(new_nodes)


def _jitter_sides(nodes, cells, chunks, side_nodes, seed, amplitude):
    """Shift interior chunk nodes tangentially, independently on each side."""
    node_cells: dict[int, list[int]] = {}
    for t, c in enumerate(cells):
        for v in c:
            node_cells.setdefault(int(v), []).append(t)
    for ci, ch in enumerate(chunks):
        d = ch.b - ch.a
        piece = np.linalg.norm(d) / (len(ch.nodes) - 1)
        t = d / np.linalg.norm(d)
        for side in (1, -1):
            ids = side_nodes[(ci, side)][1:-1]
            if not ids:
                continue
            rng = np.random.default_rng([seed, ch.fid, ci, side + 1])
            shift = rng.uniform(-amplitude, amplitude, len(ids)) * piece
            base = nodes[ids].copy()
            touched = sorted({c for v in ids for c in node_cells[v]})
            area0 = _signed_area(nodes, cells[touched])
            for _ in range(6):
                nodes[ids] = base + shift[:, None] * t
                area = _signed_area(nodes, cells[touched])
                if np.all(area > 0.2 * area0):
                    break
                shift *= 0.5
            else:
                nodes[ids] = base


# ------------------------------------------------------------ presets 2d


def square2d_network() -> Network2D:
    hub = (0.5, 0.75)
    cross = (7.0 / 12.0, 0.5)
    fr = (
        Fracture2D(1, hub, (0.7, 0.8)),
        Fracture2D(2, hub, (0.3, 0.9)),
        Fracture2D(3, hub, (0.3, 0.7)),
        Fracture2D(4, hub, (0.7, 0.6)),
        Fracture2D(5, (0.75, 0.0), hub),
        Fracture2D(6, (0.0, 0.3), (0.5, 0.3)),
        Fracture2D(7, (0.0, 0.5), (1.0, 0.5), breaks=((0.5, 0.5),)),
    )
    return Network2D(fr, (hub, cross), top_bottom, pinch_points=((0.5, 0.5),), name="square2d")


def single_fracture_network() -> Network2D:
    return Network2D(
        (Fracture2D(1, (0.5, 0.0), (0.5, 1.0)),), (), left_right, name="single-fracture-2d"
    )


def unfractured_square(dirichlet: Callable = top_bottom) -> MixedDimMesh:
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    cells = np.array([[0, 1, 2], [0, 2, 3]])
    edges = np.array([[0, 1], [1, 2], [2, 3], [0, 3]])
    mask = dirichlet(nodes[edges].mean(axis=1))
    s = Subdomain(2, 1, nodes, cells, {"dirichlet": edges[mask], "neumann": edges[~mask]})
    return MixedDimMesh(2, [s], [], 0, np.zeros((0, 2)), "unfractured-2d")


def split_square() -> MixedDimMesh:
    """Unit square cut by a full-height interface ``x1 = 0.5`` with matching grids."""
    return mesh_network_2d(
        Network2D((Fracture2D(1, (0.5, 0.0), (0.5, 1.0)),), (), everywhere, name="split-square"),
        h=0.25, trace_h=0.25, matching=True,
    )


def fracture_strip_mesh(
    left: Sequence[float], right: Sequence[float], mortar: Sequence[float],
    h: float = 0.25, dirichlet: Callable = left_right,
) -> MixedDimMesh:
    """Unit square with the fracture ``x1 = 0.5`` and prescribed 1D partitions.

    ``left`` and ``right`` are the ``x2`` breakpoints of the matrix facets on
    either side of the fracture, ``mortar`` those of the fracture (and
    mortar) grid.  Each list must start at 0 and end at 1.
    """
    import triangle

    def partition(ys) -> np.ndarray:
        y = np.asarray(ys, float)
        if y[0] != 0.0 or y[-1] != 1.0 or np.any(np.diff(y) <= 0):
            raise PresetError("partitions must increase from 0 to 1")
        return y

    yl, yr, ym = partition(left), partition(right), partition(mortar)
    halves = []
    for x_out, ys in ((0.0, yl), (1.0, yr)):
        n_out = max(1, int(np.ceil(1 / h - 1e-9)))
        n_w = max(1, int(np.ceil(0.5 / h - 1e-9)))
        ring = [(0.5, y) for y in ys]
        ring += [(0.5 + (x_out - 0.5) * k / n_w, 1.0) for k in range(1, n_w + 1)]
        ring += [(x_out, 1.0 - k / n_out) for k in range(1, n_out + 1)]
        ring += [(x_out + (0.5 - x_out) * k / n_w, 0.0) for k in range(1, n_w)]
        pts = np.array(ring)
        seg = np.array([(k, (k + 1) % len(pts)) for k in range(len(pts))], dtype=np.int32)
        tri = triangle.triangulate({"vertices": pts, "segments": seg}, f"pq28a{0.5 * h * h:.12f}Y")
        nodes = np.array(tri["vertices"], dtype=float)
        nodes[: len(pts)] = pts
        cells = np.array(tri["triangles"], dtype=np.int64)
        flip = _signed_area(nodes, cells) < 0
        cells[flip] = cells[flip][:, [0, 2, 1]]
        halves.append((nodes, cells, len(ys)))
    (nl, cl, kl), (nr, cr, kr) = halves
    nodes = np.vstack([nl, nr])
    cells = np.vstack([cl, cr + len(nl)])
    trace_l = np.array([(k, k + 1) for k in range(kl - 1)])
    trace_r = np.array([(k, k + 1) for k in range(kr - 1)]) + len(nl)
    edges = np.sort(np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    iface = {tuple(sorted(e)) for e in np.vstack([trace_l, trace_r])}
    is_iface = np.array([tuple(e) in iface for e in bnd], dtype=bool)
    outer = bnd[~is_iface]
    dmask = dirichlet(nodes[outer].mean(axis=1))
    matrix = Subdomain(2, 1, nodes, cells, {
        "dirichlet": outer[dmask], "neumann": outer[~dmask], "interface": bnd[is_iface],
    })
    fnodes = np.column_stack([np.full(len(ym), 0.5), ym])
    fcells = np.array([(k, k + 1) for k in range(len(ym) - 1)])
    ends = np.array([[0], [len(ym) - 1]])
    emask = dirichlet(fnodes[ends[:, 0]])
    frac = Subdomain(1, 1, fnodes, fcells, {"dirichlet": ends[emask], "neumann": ends[~emask]})
    # the canonical fracture tangent is +x2, so the +1 side lies at x1 < 0.5
    interfaces = [
        Interface(1, 1, 1, 1, trace_l, fcells, normal_sign=-1),
        Interface(1, 1, -1, 1, trace_r, fcells, normal_sign=1),
    ]
    return MixedDimMesh(2, [matrix, frac], interfaces, 0, np.zeros((0, 2)), "fracture-strip")


# ------------------------------------------------------------ cube3d


def _kuhn_cube(lo: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], float)
    nodes = lo + h * corners
    index = {tuple(c.astype(int)): n for n, c in enumerate(corners)}
    tets = []
    for perm in permutations(range(3)):
        v = np.zeros(3, int)
        path = [index[tuple(v)]]
        for axis in perm:
            v[axis] = 1
            path.append(index[tuple(v)])
        tets.append(path)
    return nodes, np.array(tets)


def cube3d_mesh() -> MixedDimMesh:
    """Level-0 mesh of the three-plane cube (one Kuhn cube per subcube)."""
    half = 0.5
    subs, ifaces = [], []
    centre = np.full(3, 0.5)

    def quad_nodes(axis: int, value: float, lo: tuple[float, float]):
        a, b = [k for k in range(3) if k != axis]
        pts = []
        for u, v in ((0, 0), (1, 0), (1, 1), (0, 1)):
            x = np.zeros(3)
            x[axis] = value
            x[a], x[b] = lo[0] + half * u, lo[1] + half * v
            pts.append(x)
        return np.array(pts)

    # subcubes
    cubes = {}
    for n, lo in enumerate(np.array([[i, j, k] for i in (0, .5) for j in (0, .5) for k in (0, .5)])):
        nodes, tets = _kuhn_cube(lo, half)
        cubes[n + 1] = (lo, nodes, tets)

    def faces_of(nodes, tets):
        f = np.concatenate([np.delete(tets, i, axis=1) for i in range(4)])
        f = np.sort(f, axis=1)
        u, c = np.unique(f, axis=0, return_counts=True)
        return u[c == 1]

    # quarter planes: axis, quadrant lower corner in the other two coordinates
    planes = {}
    pid = 0
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        for la in (0.0, 0.5):
            for lb in (0.0, 0.5):
                pid += 1
                pts = quad_nodes(axis, 0.5, (la, lb))
                cells = np.array([[0, 1, 2], [0, 2, 3]])  # diagonal lo-lo to hi-hi
                planes[pid] = (axis, (a, la), (b, lb), pts, cells)

    def on_plane_face(x, axis, qa, qb):
        a, la = qa
        b, lb = qb
        return (
            (np.abs(x[..., axis] - 0.5) < 1e-12)
            & (x[..., a] >= la - 1e-12) & (x[..., a] <= la + half + 1e-12)
            & (x[..., b] >= lb - 1e-12) & (x[..., b] <= lb + half + 1e-12)
        ).all(axis=-1)

    for cid, (lo, nodes, tets) in cubes.items():
        bf = faces_of(nodes, tets)
        xf = nodes[bf]
        interior = np.any(np.all(np.abs(xf - 0.5) < 1e-12, axis=1), axis=1)
        top_bot = np.all(np.abs(xf[..., 2] - 0.0) < 1e-12, axis=1) | np.all(np.abs(xf[..., 2] - 1.0) < 1e-12, axis=1)
        tags = {
            "interface": bf[interior],
            "dirichlet": bf[~interior & top_bot],
            "neumann": bf[~interior & ~top_bot],
        }
        subs.append(Subdomain(3, cid, nodes, tets, tags))
        for qid, (axis, qa, qb, pts, pcells) in planes.items():
            hit = on_plane_face(xf, axis, qa, qb)
            if not hit.any():
                continue
            side = 1 if lo[axis] >= 0.5 else -1
            # mortar cells in plane numbering matching the cube faces
            ifaces.append(Interface(2, qid, side, cid, bf[hit], pcells, normal_sign=-side))

    # half lines: direction axis, lower end 0 or 0.5
    lines = {}
    lid = 0
    for axis in range(3):
        for lo in (0.0, 0.5):
            lid += 1
            a = np.full(3, 0.5)
            b = np.full(3, 0.5)
            a[axis], b[axis] = lo, lo + half
            lines[lid] = (axis, lo, np.array([a, b]))

    for qid, (axis, qa, qb, pts, pcells) in planes.items():
        edges = np.array([[0, 1], [1, 2], [2, 3], [0, 3]])
        xm = pts[edges].mean(axis=1)
        on_line = np.sum(np.abs(xm - 0.5) < 1e-12, axis=1) >= 2
        on_tb = (np.abs(xm[:, 2]) < 1e-12) | (np.abs(xm[:, 2] - 1) < 1e-12)
        tags = {
            "interface": edges[on_line],
            "dirichlet": edges[~on_line & on_tb],
            "neumann": edges[~on_line & ~on_tb],
        }
        subs.append(Subdomain(2, qid, pts, pcells, tags))
        for lid_, (laxis, llo, lpts) in lines.items():
            for e in edges[on_line]:
                seg = pts[e]
                if np.allclose(np.sort(seg, axis=0), np.sort(lpts, axis=0), atol=1e-12):
                    # the half line's own node order is (lo end, hi end)
                    ifaces.append(Interface(1, lid_, 0, qid, [e], [[0, 1]]))

    for lid_, (axis, lo, lpts) in lines.items():
        ends = np.array([[0], [1]])
        at_centre = np.all(np.abs(lpts - centre) < 1e-12, axis=1)
        outer = ~at_centre
        tb = outer & ((np.abs(lpts[:, 2]) < 1e-12) | (np.abs(lpts[:, 2] - 1) < 1e-12))
        tags = {
            "interface": ends[at_centre],
            "dirichlet": ends[tb],
            "neumann": ends[outer & ~tb],
        }
        subs.append(Subdomain(1, lid_, lpts, [[0, 1]], tags))
        ifaces.append(Interface(0, 1, lid_, lid_, ends[at_centre], [[0]]))
    subs.append(Subdomain(0, 1, centre[None, :], [[0]]))

    # number line sides 1..4 deterministically
    out, counter = [], {}
    for f in ifaces:
        if f.dim == 1:
            counter[f.lower_id] = counter.get(f.lower_id, 0) + 1
            f = Interface(1, f.lower_id, counter[f.lower_id], f.upper_id, f.upper_facets, f.mortar_cells)
        out.append(f)
    return MixedDimMesh(3, subs, out, 0, np.zeros((0, 3)), "cube3d")


# ------------------------------------------------------------ parameters


def square2d_parameters() -> ParameterTable:
    conducting = FeatureParams(K=100.0, K_nu=100.0, gamma=0.01)
    feats = {(1, i): conducting for i in range(1, 6)}
    feats[(1, 6)] = FeatureParams(K=0.01, K_nu=0.01, gamma=0.01)
    feats[(1, 7)] = FeatureParams(K=0.01, K_nu=0.01, gamma=PINCH_GAMMA)
    feats[(0, 1)] = conducting
    feats[(0, 2)] = conducting
    feats[(2, 1)] = FeatureParams(K=1.0)
    return ParameterTable(feats, FeatureParams(K=1.0))


def cube3d_parameters() -> ParameterTable:
    lower = FeatureParams(K=100.0, K_nu=100.0, gamma=0.01)
    feats = {(3, i): FeatureParams(K=1.0) for i in range(1, 9)}
    feats.update({(2, i): lower for i in range(1, 13)})
    feats.update({(1, i): lower for i in range(1, 7)})
    feats[(0, 1)] = lower
    return ParameterTable(feats, lower)


def single_fracture_parameters(K_nu: float = 0.01, gamma: float = 0.01) -> ParameterTable:
    return ParameterTable(
        {(2, 1): FeatureParams(K=1.0), (1, 1): FeatureParams(K=1.0, K_nu=K_nu, gamma=gamma)},
        FeatureParams(K=1.0),
    )


def unfractured_parameters() -> ParameterTable:
    return ParameterTable({(2, 1): FeatureParams(K=1.0)}, FeatureParams(K=1.0))


def default_parameters(preset: str) -> ParameterTable:
    return {
        "square2d": square2d_parameters,
        "cube3d": cube3d_parameters,
        "single-fracture-2d": single_fracture_parameters,
        "unfractured-2d": unfractured_parameters,
    }[_check_preset(preset)]()


def default_pressure_data(preset: str) -> str:
    """Dirichlet pressure as an expression in the coordinates."""
    return {
        "square2d": "1 - x2",
        "cube3d": "x3*(x1**2 + x2)",
        "single-fracture-2d": "1 - x1",
        "unfractured-2d": "1 - x2",
    }[_check_preset(preset)]


# ------------------------------------------------------------ entry point

SQUARE2D_H = 0.1
SQUARE2D_TRACE_H = 0.05


def _check_preset(preset: str) -> str:
    if preset not in PRESETS:
        raise PresetError(f"unknown preset '{preset}'; choose from {', '.join(PRESETS)}")
    return preset


def base_mesh(preset: str, seed: int = 0, matching: bool = False) -> MixedDimMesh:
    """Level-0 mesh of a preset."""
    _check_preset(preset)
    if preset == "unfractured-2d":
        return unfractured_square()
    if preset == "cube3d":
        return cube3d_mesh()
    if preset == "single-fracture-2d":
        return mesh_network_2d(single_fracture_network(), 0.25, 0.125, seed, matching)
    return mesh_network_2d(square2d_network(), SQUARE2D_H, SQUARE2D_TRACE_H, seed, matching)


def build_benchmark_mesh(preset: str, level: int = 0, seed: int = 0, matching: bool = False) -> MixedDimMesh:
    """Mesh of a benchmark preset after ``level`` uniform refinements."""
    mesh = base_mesh(preset, seed, matching)
    limit = MAX_LEVEL[mesh.ambient_dim]
    if level < 0 or level > limit:
        raise PresetError(f"level {level} outside 0..{limit} for preset '{preset}'")
    for _ in range(level):
        mesh = refine(mesh)
    return mesh


def describe_preset(preset: str) -> str:
    """Text summary of the dimensional decomposition and parameters."""
    mesh = base_mesh(preset)
    table = default_parameters(preset)
    counts = mesh.counts()
    lines = [f"preset {preset} (ambient dimension {mesh.ambient_dim})"]
    lines.append("subdomains per dimension: " + "/".join(str(counts[d]) for d in sorted(counts, reverse=True)))
    lines.append(f"lower-dimensional features: {sum(1 for s in mesh if s.dim < mesh.ambient_dim)}")
    lines.append(f"interfaces: {len(mesh.interfaces)}")
    lines.append(f"{'dim':>3} {'id':>3}  {'start':>16} {'end':>16}  {'K':>8} {'K_nu':>8}  gamma")
    for s in mesh:
        p = table[s.key]
        lo, hi = _extent(s.nodes) if s.dim < mesh.ambient_dim else _bounding_box(s.nodes)
        kn = "-" if s.dim == mesh.ambient_dim else f"{float(p.K_nu):8.3g}"
        gm = "1" if s.dim == mesh.ambient_dim else str(p.gamma)
        k = "-" if s.dim == 0 else f"{float(np.asarray(p.K).flat[0]):8.3g}"
        lines.append(f"{s.dim:>3} {s.id:>3}  {lo:>16} {hi:>16}  {k:>8} {kn:>8}  {gm}")
    lines.append(f"pressure data: g = {default_pressure_data(preset)}")
    return "\n".join(lines)


def _bounding_box(x: np.ndarray) -> tuple[str, str]:
    fmt = lambda v: "(" + ", ".join(f"{c:.4g}" for c in v) + ")"  # noqa: E731
    return fmt(x.min(axis=0)), fmt(x.max(axis=0))


def _extent(x: np.ndarray) -> tuple[str, str]:
    fmt = lambda v: "(" + ", ".join(f"{c:.4g}" for c in v) + ")"  # noqa: E731
    if x.shape[0] == 1:
        return fmt(x[0]), ""
    d = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(d, full_matrices=False)
    t = d @ vt[0]
    return fmt(x[np.argmin(t)]), fmt(x[np.argmax(t)])


def feature_counts(mesh: MixedDimMesh) -> dict[int, int]:
    return mesh.counts()


def lower_dim_keys(mesh: MixedDimMesh) -> Sequence[tuple[int, int]]:
    return [s.key for s in mesh if s.dim < mesh.ambient_dim]
