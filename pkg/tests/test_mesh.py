from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdfrac.mesh import (
    Interface, MeshError, MixedDimMesh, Subdomain, dumps_mesh, load_mesh, mesh_from_dict,
    mesh_to_dict, refine, save_mesh, validate_mesh,
)
from mdfrac.presets import (
    PresetError, base_mesh, build_benchmark_mesh, fracture_strip_mesh, split_square, unfractured_square,
)

from conftest import benchmark_mesh


def single_simplex_mesh(vertices) -> MixedDimMesh:
    v = np.asarray(vertices, float)
    d = v.shape[0] - 1
    cells = np.arange(d + 1)[None, :]
    facets = [[j for j in range(d + 1) if j != i] for i in range(d + 1)] if d else []
    return MixedDimMesh(v.shape[1], [Subdomain(d, 1, v, cells, {"dirichlet": facets})], [])


def volumes_of(mesh, key):
    return mesh[key].geometry.volumes


# ------------------------------------------------------------------ presets


def test_cube3d_subdomain_counts(cube3d):
    assert cube3d.counts() == {3: 8, 2: 12, 1: 6, 0: 1}


def test_unfractured_square_has_no_interfaces():
    mesh = build_benchmark_mesh("unfractured-2d", 0)
    assert mesh.counts() == {2: 1, 1: 0, 0: 0}
    assert mesh.interfaces == []


def test_square2d_fracture_five_endpoints(square2d):
    x = square2d[(1, 5)].nodes
    t = x @ (np.array([0.5, 0.75]) - np.array([0.75, 0.0]))
    np.testing.assert_allclose(x[np.argmin(t)], [0.75, 0.0], atol=1e-15)
    np.testing.assert_allclose(x[np.argmax(t)], [0.5, 0.75], atol=1e-15)


def test_square2d_feature_list(square2d):
    assert [s.key for s in square2d.by_dim(1)] == [(1, i) for i in range(1, 8)]
    assert len(square2d.by_dim(0)) == 2


@pytest.mark.parametrize("preset", ["square2d", "cube3d", "single-fracture-2d", "unfractured-2d"])
def test_presets_validate(preset):
    validate_mesh(benchmark_mesh(preset, 0))
    validate_mesh(benchmark_mesh(preset, 1))


def test_level_outside_range_is_rejected():
    with pytest.raises(PresetError):
        build_benchmark_mesh("cube3d", 9)
    with pytest.raises(PresetError):
        build_benchmark_mesh("nope", 0)


def test_nonmatching_sides_differ(square2d):
    # the two sides of each fracture are perturbed independently
    for fid in range(1, 8):
        ks = square2d.interfaces_of((1, fid))
        sides = [np.sort(square2d[(2, 1)].nodes[square2d.interfaces[k].upper_facets].reshape(-1, 2), axis=0)
                 for k in ks]
        assert not np.allclose(sides[0], sides[1])


def test_seed_controls_perturbation():
    a, b, c = base_mesh("single-fracture-2d", 0), base_mesh("single-fracture-2d", 0), base_mesh("single-fracture-2d", 1)
    assert dumps_mesh(a) == dumps_mesh(b)
    assert dumps_mesh(a) != dumps_mesh(c)


# ------------------------------------------------------------------ refinement


def test_unit_triangle_has_four_congruent_children():
    fine = refine(single_simplex_mesh([[0, 0], [1, 0], [0, 1]]))
    vol = volumes_of(fine, (2, 1))
    assert len(vol) == 4
    np.testing.assert_allclose(vol, 0.125, rtol=0, atol=1e-15)
    s = fine[(2, 1)]
    lengths = [sorted(np.linalg.norm(np.diff(s.nodes[c][[0, 1, 2, 0]], axis=0), axis=1)) for c in s.cells]
    np.testing.assert_allclose(lengths, [lengths[0]] * 4, atol=1e-15)


def test_interval_splits_at_midpoint():
    fine = refine(single_simplex_mesh([[0.0], [1.0]]))
    s = fine[(1, 1)]
    intervals = sorted(tuple(sorted(s.nodes[c, 0])) for c in s.cells)
    assert intervals == [(0.0, 0.5), (0.5, 1.0)]


def test_cube3d_refinement_multiplies_cells_by_eight(cube3d):
    fine = refine(cube3d)
    for s in cube3d.by_dim(3):
        assert fine[s.key].num_cells == 8 * s.num_cells
    for s in cube3d.by_dim(2):
        assert fine[s.key].num_cells == 4 * s.num_cells


@pytest.mark.parametrize("preset", ["square2d", "cube3d"])
def test_refinement_nesting_preserves_measure(preset):
    coarse, fine = benchmark_mesh(preset, 0), benchmark_mesh(preset, 1)
    for s in coarse:
        if s.dim == 0:
            continue
        fv = fine[s.key].geometry.volumes
        agg = np.bincount(fine.parents[s.key].cell_parent, weights=fv, minlength=s.num_cells)
        np.testing.assert_allclose(agg, s.geometry.volumes, rtol=1e-12)
        # each child centroid lies inside its parent cell
        g = s.geometry
        parent = fine.parents[s.key].cell_parent
        loc = fine[s.key].geometry.centroids @ g.frame
        a = g.local[s.cells[parent]]
        lam = np.einsum("mij,mj->mi", g.grad_bary[parent], loc - a[:, 0])
        lam[:, 0] += 1.0  # barycentric coordinates relative to the parent vertices
        assert lam.min() > -1e-12


def test_facet_parent_signs_are_orientations(square2d):
    fine = refine(square2d)
    pm = fine.parents[(2, 1)]
    has = pm.facet_parent >= 0
    assert set(np.unique(pm.facet_sign[has])) <= {-1.0, 1.0}
    # every coarse facet is covered by exactly two children
    counts = np.bincount(pm.facet_parent[has], minlength=square2d[(2, 1)].num_facets)
    assert np.all(counts == 2)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=6, max_size=6))
def test_random_triangle_refinement_is_exact(coords):
    v = np.array(coords).reshape(3, 2)
    area = 0.5 * abs(np.linalg.det(v[1:] - v[0]))
    if area < 1e-3:
        return
    fine = refine(single_simplex_mesh(v))
    vol = volumes_of(fine, (2, 1))
    np.testing.assert_allclose(vol, area / 4, rtol=1e-12)
    np.testing.assert_allclose(fine[(2, 1)].geometry.centroids.mean(axis=0), v.mean(axis=0), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=12, max_size=12))
def test_random_tetrahedron_refinement_preserves_volume(coords):
    v = np.array(coords).reshape(4, 3)
    vol = abs(np.linalg.det(v[1:] - v[0])) / 6
    if vol < 1e-2:
        return
    fine = refine(single_simplex_mesh(v))
    child = volumes_of(fine, (3, 1))
    assert len(child) == 8
    np.testing.assert_allclose(child.sum(), vol, rtol=1e-12)
    np.testing.assert_allclose(child, vol / 8, rtol=1e-10)


# ------------------------------------------------------------------ invariants


@pytest.mark.parametrize("preset", ["square2d", "cube3d", "single-fracture-2d"])
def test_interface_coverage_and_orientation(preset):
    mesh = benchmark_mesh(preset, 1)
    for f, tr in zip(mesh.interfaces, mesh.trace):
        lo, up = mesh[f.lower_key], mesh[f.upper_key]
        np.testing.assert_allclose(lo.geometry.volumes[tr.mortar_cells].sum(), lo.measure, rtol=1e-12)
        if f.dim == 0:
            continue
        ug = up.geometry
        cells = ug.facet_cells[tr.upper_facets, 0]
        lower_centroids = lo.geometry.centroids[tr.mortar_cells]
        gap = lower_centroids.mean(axis=0) - ug.centroids[cells].mean(axis=0)
        assert gap @ tr.normals[0] > 0


def test_decomposition_measures_square2d(square2d):
    assert square2d[(2, 1)].measure == pytest.approx(1.0, abs=1e-12)
    seg = {1: ((0.5, 0.75), (0.7, 0.8)), 2: ((0.5, 0.75), (0.3, 0.9)), 3: ((0.5, 0.75), (0.3, 0.7)),
           4: ((0.5, 0.75), (0.7, 0.6)), 5: ((0.75, 0.0), (0.5, 0.75)), 6: ((0.0, 0.3), (0.5, 0.3)),
           7: ((0.0, 0.5), (1.0, 0.5))}
    for fid, (a, b) in seg.items():
        expected = np.linalg.norm(np.subtract(b, a))
        assert square2d[(1, fid)].measure == pytest.approx(expected, rel=1e-12)


def test_decomposition_measures_cube3d(cube3d):
    per_dim = {d: sum(s.measure for s in cube3d.by_dim(d)) for d in (3, 2, 1)}
    assert per_dim[3] == pytest.approx(1.0, abs=1e-12)
    assert per_dim[2] == pytest.approx(3.0, abs=1e-12)
    assert per_dim[1] == pytest.approx(3.0, abs=1e-12)


def test_every_lower_subdomain_has_interfaces(square2d, cube3d):
    for mesh in (square2d, cube3d):
        for s in mesh:
            if s.dim < mesh.ambient_dim:
                assert mesh.interfaces_of(s.key)


def test_missing_dirichlet_boundary_is_rejected():
    mesh = unfractured_square()
    s = mesh[(2, 1)]
    tags = {"neumann": np.vstack([s.facet_tags["dirichlet"], s.facet_tags["neumann"]])}
    bad = MixedDimMesh(2, [Subdomain(2, 1, s.nodes, s.cells, tags)], [])
    with pytest.raises(MeshError, match="Dirichlet"):
        validate_mesh(bad)


def test_incomplete_mortar_grid_is_rejected():
    mesh = fracture_strip_mesh([0, 0.5, 1], [0, 0.5, 1], [0, 0.5, 1])
    f = mesh.interfaces[0]
    short = Interface(f.dim, f.lower_id, f.side, f.upper_id, f.upper_facets, f.mortar_cells[:1], f.normal_sign)
    bad = MixedDimMesh(2, mesh.subdomains, [short, mesh.interfaces[1]])
    with pytest.raises(MeshError, match="cover"):
        validate_mesh(bad)


def test_lower_subdomain_without_interface_is_rejected():
    mesh = fracture_strip_mesh([0, 0.5, 1], [0, 0.5, 1], [0, 0.5, 1])
    bad = MixedDimMesh(2, mesh.subdomains, [])
    with pytest.raises(MeshError):
        validate_mesh(bad)


# ------------------------------------------------------------------ json


@pytest.mark.parametrize("preset,level", [("square2d", 0), ("cube3d", 1), ("single-fracture-2d", 2)])
def test_json_round_trip_is_bit_identical(preset, level, tmp_path):
    mesh = benchmark_mesh(preset, level)
    text = dumps_mesh(mesh)
    path = tmp_path / "mesh.json"
    save_mesh(mesh, path)
    again = load_mesh(path)
    assert dumps_mesh(again) == text
    validate_mesh(again)


def test_json_field_names(square2d):
    doc = json.loads(dumps_mesh(square2d))
    assert {"ambient_dim", "subdomains", "interfaces"} <= set(doc)
    assert set(doc["subdomains"][0]) == {"dim", "id", "vertices", "cells", "facet_tags"}
    assert set(doc["interfaces"][0]) == {
        "dim", "lower_id", "side", "upper_id", "upper_facets", "mortar_cells", "normal_sign",
    }
    assert mesh_to_dict(mesh_from_dict(doc)) == doc


def test_split_square_is_matching():
    mesh = split_square()
    validate_mesh(mesh)
    for f in mesh.interfaces:
        assert f.upper_facets.shape[0] == f.num_mortar
