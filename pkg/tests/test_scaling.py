from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdfrac.mesh import refine
from mdfrac.presets import PINCH_GAMMA, square2d_parameters
from mdfrac.scaling import (
    FeatureParams, ParameterError, ParameterTable, as_field, attach_scaling, compile_expression,
    eps_law, gradient_ratio, validate_gradient_bound,
)

from conftest import benchmark_mesh


def with_feature(table: ParameterTable, key, **kw) -> ParameterTable:
    feats = dict(table.features)
    feats[key] = FeatureParams(**{**vars(table[key]), **kw})
    return ParameterTable(feats, table.default, table.eps_exponent)


@pytest.fixture(scope="module")
def square_fields(square2d):
    return attach_scaling(square2d, square2d_parameters())


# ------------------------------------------------------------------ expressions


def test_pinch_law_at_right_boundary():
    g = as_field(PINCH_GAMMA)
    np.testing.assert_allclose(g(np.array([[1.0, 0.5]])), [0.01], rtol=1e-15)
    np.testing.assert_allclose(g(np.array([[0.25, 0.5], [0.5, 0.5]])), [0.0, 0.0])
    np.testing.assert_allclose(g(np.array([[0.75, 0.5]])), [0.01 * 0.5 ** 4], rtol=1e-15)


@pytest.mark.parametrize("text", ["__import__('os')", "x1.real", "x4 + 1", "open('f')", "[x1]", "x1 if x2 else 0"])
def test_unsafe_or_unknown_expressions_are_rejected(text):
    with pytest.raises(ParameterError):
        compile_expression(text)


def test_expression_functions_are_elementwise():
    f = compile_expression("max(x1 - 0.5, 0)**2 + sqrt(x2) - -1")
    x = np.array([[0.25, 4.0], [1.0, 0.0]])
    np.testing.assert_allclose(f(x), [3.0, 1.25])


# ------------------------------------------------------------------ attach_scaling


def test_top_dimension_has_unit_scaling(square_fields, square2d):
    np.testing.assert_array_equal(square_fields.eps[(2, 1)], 1.0)
    np.testing.assert_array_equal(square_fields.eps_hat_max[(2, 1)], 1.0)
    for k, f in enumerate(square2d.interfaces):
        if f.upper_key == (2, 1):
            np.testing.assert_array_equal(square_fields.eps_hat[k], 1.0)


def test_constant_aperture_scaling_law(square_fields):
    # eps = (2 gamma)^((n - d) / 2) with gamma = 0.01
    np.testing.assert_allclose(square_fields.eps[(1, 1)], math.sqrt(0.02), rtol=1e-14)
    np.testing.assert_allclose(square_fields.eps[(0, 1)], 0.02, rtol=1e-14)


def test_point_eps_hat_comes_from_branches(square_fields, square2d):
    for k in square2d.interfaces_of((0, 1)):
        np.testing.assert_allclose(square_fields.eps_hat[k], math.sqrt(0.02), rtol=1e-14)
    np.testing.assert_allclose(square_fields.eps_hat_max[(0, 1)], math.sqrt(0.02), rtol=1e-14)


def test_zero_aperture_feature_gives_zero_scalings(square2d):
    table = square2d_parameters()
    for fid in (1, 2):
        table = with_feature(table, (1, fid), gamma=0.0)
    fields = attach_scaling(square2d, table)
    np.testing.assert_array_equal(fields.eps[(1, 1)], 0.0)
    for k in square2d.interfaces_of((0, 1)):
        f = square2d.interfaces[k]
        if f.upper_id in (1, 2):
            np.testing.assert_array_equal(fields.eps_hat[k], 0.0)
    assert np.all(fields.eps_hat_max[(0, 1)] > 0)


def test_pinch_fracture_is_zero_on_left_half(square_fields, square2d):
    c = square2d[(1, 7)].geometry.centroids
    left = c[:, 0] < 0.5 - 0.05
    np.testing.assert_array_equal(square_fields.eps[(1, 7)][left], 0.0)
    np.testing.assert_array_equal(square_fields.gamma[(1, 7)][left], 0.0)
    assert np.all(square_fields.eps[(1, 7)][c[:, 0] > 0.55] > 0)


def test_eps_hat_max_is_max_over_sides(square_fields, square2d):
    for s in square2d:
        if s.dim == 2:
            continue
        expected = np.zeros(s.num_cells)
        for k in square2d.interfaces_of(s.key):
            cells = square2d.trace[k].mortar_cells
            expected[cells] = np.maximum(expected[cells], square_fields.eps_hat[k])
        np.testing.assert_array_equal(square_fields.eps_hat_max[s.key], expected)


def test_eps_e_dominates_eps(square_fields, square2d):
    for s in square2d:
        assert np.all(square_fields.eps_e[s.key] >= square_fields.eps[s.key])


@pytest.mark.parametrize("override,match", [
    ({"gamma": -0.1}, "aperture"),
    ({"K_nu": 0.0}, "K_nu"),
    ({"K": ((1.0, 2.0), (2.0, 1.0))}, "positive definite"),
])
def test_inadmissible_parameters_raise(square2d, override, match):
    key = (1, 1) if "K" not in override else (2, 1)
    table = with_feature(square2d_parameters(), key, **override)
    with pytest.raises(ParameterError, match=match):
        attach_scaling(square2d, table)


def test_unbounded_scaling_ratio_is_rejected(square2d):
    table = with_feature(square2d_parameters(), (1, 1), gamma=1e6)
    with pytest.raises(ParameterError, match="exceeds"):
        attach_scaling(square2d, table)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.integers(1, 3))
def test_eps_law_is_monotone(g1, g2, codim):
    a, b = sorted((g1, g2))
    assert eps_law(np.array([a]), codim)[0] <= eps_law(np.array([b]), codim)[0]
    assert eps_law(np.array([a]), 0)[0] == 1.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.05), st.floats(0.0, 0.05), st.floats(0.0, 0.05))
def test_eps_e_bounds_eps_for_random_linear_apertures(c0, c1, c2):
    mesh = benchmark_mesh("square2d", 0)
    law = f"{c0 + 1e-4} + {c1} * x1 + {c2} * x2"
    table = ParameterTable(
        {k: FeatureParams(**{**vars(p), "gamma": law}) if k[0] < 2 else p
         for k, p in square2d_parameters().features.items()}, FeatureParams(K=1.0))
    fields = attach_scaling(mesh, table, check=False)
    for s in mesh:
        assert np.all(fields.eps_e[s.key] >= fields.eps[s.key])


# ------------------------------------------------------------------ gradient bound


def test_constant_scaling_has_zero_ratio(square_fields):
    assert gradient_ratio(square_fields, (1, 1)).max() == 0.0
    assert validate_gradient_bound(square_fields).per_subdomain[(1, 6)] == 0.0


def test_pinch_law_ratio_matches_closed_form():
    mesh = benchmark_mesh("square2d", 3)
    fields = attach_scaling(mesh, square2d_parameters())
    report = validate_gradient_bound(fields)
    assert not report.violated
    ratio = gradient_ratio(fields, (1, 7))
    s = mesh[(1, 7)]
    x = s.nodes[s.cells][:, :, 0]
    inside = x.min(axis=1) >= 0.5
    # eps = sqrt(0.02) (2 (x - 0.5))^2 gives |eps'| / eps^(1/2) = 4 * 0.02^(1/4) everywhere
    closed_form = 4 * 0.02 ** 0.25
    np.testing.assert_allclose(ratio[inside], closed_form, rtol=1e-9)
    assert report.per_subdomain[(1, 7)] < 10


def test_linear_scaling_ratio_diverges_under_refinement():
    # (2 gamma)^(1/2) = max(x1 - 0.5, 0) makes eps linear beyond the tip
    table = with_feature(square2d_parameters(), (1, 7), gamma="0.5*max(x1 - 0.5, 0)**2")
    mesh = benchmark_mesh("square2d", 0)
    ratios = []
    for _ in range(4):
        ratios.append(validate_gradient_bound(attach_scaling(mesh, table)).per_subdomain[(1, 7)])
        mesh = refine(mesh)
    assert all(b > 1.3 * a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] > 10
