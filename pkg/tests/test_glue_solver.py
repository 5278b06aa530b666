import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cylcone.config import NEWTON_MAX_ITER
from cylcone.errors import BadBeta, DegenerateStencil
from cylcone.glue_solver import (
    REGION_GRAPH, REGION_LEAF, EquivariantSurface, make_weights, build_X, build_X_halves,
    halves_to_rows, leaf_surface, mean_curvature, weighted_certificate, newton_solve_T,
    quadratic_remainder_check, graph_over_leaf, scale_T, symmetry_defect, norm_comparison_check,
)


@pytest.fixture(scope="module")
def X7(table33):
    return build_X(table33, 7, 1.5, 2.0)


def test_default_weights(cone33):
    spec = make_weights(cone33, 7)
    assert_allclose(spec.delta, 7 - cone33.gamma + 0.05)
    assert_allclose(spec.tau, -cone33.gamma - 0.05)
    with pytest.raises(ValueError):
        make_weights(cone33, 7, delta=5.0)
    with pytest.raises(ValueError):
        make_weights(cone33, 7, tau=0.0)
    with pytest.raises(ValueError):
        make_weights(cone33, 7, delta=6.0)


def test_beta_range(table33):
    with pytest.raises(BadBeta):
        build_X(table33, 7, 1.0, 2.0)
    with pytest.raises(BadBeta):
        build_X(table33, 7, 7.0 / 3.0, 2.0)


def test_X_layout(X7):
    assert X7.shape == (64, 48)
    assert X7.meta["rho_max"] == 0.5
    regions = X7.meta["regions"]
    assert np.any(regions == REGION_GRAPH)
    assert np.any(regions == REGION_LEAF)
    assert np.all(X7.positions[..., 2] > 0)
    assert np.all(X7.positions[..., :2] >= -1e-12)


def test_leaf_surface_is_minimal(table33):
    surface = leaf_surface(table33, 0.5, grid=(64, 12))
    flat = mean_curvature(surface).scaled_sup
    assert flat < 0.05
    c = surface.frame.leaf.axis_radius
    bumped = mean_curvature(surface.with_offsets(np.full(surface.shape, 0.2 * c))).scaled_sup
    assert bumped > 2.0 * flat


def test_axis_row_uses_one_sided_stencils(table33):
    surface = leaf_surface(table33, 0.5, grid=(64, 12))
    field = mean_curvature(surface)
    assert field.values.shape == (63, 10)
    assert field.meta["one_sided"] == [(0, j) for j in range(1, 11)]
    axis = field.values[0] * field.r[0]
    assert np.all(np.isfinite(axis))
    assert np.max(np.abs(axis)) < 0.05
    assert_allclose(field.r[0], surface.frame.leaf.axis_radius, rtol=1e-6)


def test_axis_stencil_fails_at_the_origin(table33):
    with pytest.raises(DegenerateStencil):
        mean_curvature(leaf_surface(table33, 0.0, grid=(16, 6)))


def test_certificate_improves_with_A(table33, cone33):
    spec = make_weights(cone33, 7)
    sups = []
    for A in (2.0, 4.0, 8.0):
        X = build_X(table33, 7, 1.5, A)
        report = weighted_certificate(mean_curvature(X), spec, 0.0, A)
        assert report.rows
        sups.append(report.sup)
    assert sups[0] > sups[1] > sups[2]


def test_certificate_bound(X7, cone33):
    spec = make_weights(cone33, 7)
    field = mean_curvature(X7)
    report = weighted_certificate(field, spec, 1.0, 2.0)
    assert report.bound == 0.5
    assert report.passed == (report.sup <= 0.5)
    assert all(row[2] <= report.sup for row in report.rows)


def test_symmetry_for_equal_factors(table33, X7):
    lower = build_X(table33, 7, 1.5, 2.0, half="lower")
    assert symmetry_defect(X7, lower) < 1e-8


def test_scale_T_scales_positions(X7, cone33):
    lam = 0.3
    scaled = scale_T(X7, lam)
    factor = lam ** (1.0 / (1.0 - (7 - cone33.gamma)))
    assert_allclose(scaled.positions, factor * X7.positions, rtol=1e-10, atol=1e-14)
    flipped = scale_T(X7, -lam)
    assert_allclose(flipped.positions[..., 2], -factor * X7.positions[..., 2], rtol=1e-10)
    with pytest.raises(ValueError):
        scale_T(X7, 0.0)


def test_norm_comparison(X7, cone33):
    spec = make_weights(cone33, 7)
    result = norm_comparison_check(X7.w, X7, spec, 2.0, 1.0)
    assert result["C"] >= 0
    assert math.isfinite(result["C"])


def test_norm_comparison_sees_derivatives(X7, cone33):
    spec = make_weights(cone33, 7)
    i = np.arange(X7.shape[0], dtype=float)[:, None]
    w = 1e-3 * X7.r * np.sin(0.5 * math.pi * i)
    result = norm_comparison_check(w, X7, spec, 2.0, 1.0)
    assert len(result["orders"]) == spec.order + 1
    assert_allclose(result["orders"][0], result["unit_c0"])
    assert result["unit_norm"] >= 5.0 * result["unit_c0"]
    assert result["weighted_norm"] > 0
    assert math.isfinite(result["C"])


def test_newton_reduces_residual(X7, cone33):
    X = X7
    T = newton_solve_T(X, make_weights(cone33, 7))
    history = T.meta["newton_history"]
    assert history[-1] < history[0]
    assert all(b < a for a, b in zip(history, history[1:]))
    assert T.meta["kind"] == "T"
    assert T.shape == X.shape
    assert X.meta["kind"] == "X"


def test_newton_converges_quadratically(X7, cone33):
    T = newton_solve_T(X7, make_weights(cone33, 7))
    history = T.meta["newton_history"]
    assert history[0] / history[-1] >= 1e4
    assert T.meta["newton_iterations"] <= NEWTON_MAX_ITER
    check = quadratic_remainder_check(X7, samples=3)
    assert check["min_exponent"] >= 1.9


@pytest.fixture(scope="module")
def halves(table33):
    return build_X_halves(table33, 7, 1.5, 2.0)


def test_X_covers_both_halves(halves):
    upper, lower = halves
    assert upper.shape == lower.shape == (64, 48)
    assert np.all(upper.positions[..., 2] > 0)
    assert np.all(lower.positions[..., 2] < 0)
    rows = halves_to_rows(upper, lower)
    assert len(rows) == 64 * 96
    heights = np.array([row[4] for row in rows if row[0] == 0])
    assert len(heights) == 96
    assert np.all(np.diff(heights) > 0)
    gap = float(np.min(upper.positions[..., 2]))
    assert gap > 0
    assert_allclose(gap, -float(np.max(lower.positions[..., 2])), rtol=1e-10)


def test_X_halves_need_an_even_height_grid(table33):
    with pytest.raises(ValueError):
        build_X_halves(table33, 7, 1.5, 2.0, grid=(64, 47))


def test_graph_at_the_cone_base(X7, table33, cone33):
    at_cone = graph_over_leaf(X7, 0.0)
    assert at_cone.slice_index == -1
    assert at_cone.y0 == 0.0
    assert at_cone.base_t == 0.0
    assert np.all(at_cone.f == 0.0)
    leaf = graph_over_leaf(leaf_surface(table33, 0.5), 0.0)
    assert leaf.slice_index == -1
    assert_allclose(leaf.decay_slope, -cone33.gamma, rtol=1e-8)


def test_negative_scale_swaps_even_branches(table33):
    plus = leaf_surface(table33, 0.5, grid=(64, 12))
    swapped = scale_T(plus, -1.0)
    minus = leaf_surface(table33, -0.5, grid=(64, 12))
    assert_allclose(swapped.positions, minus.positions, rtol=1e-10, atol=1e-12)
    assert_allclose(swapped.t, -0.5)
    assert mean_curvature(swapped).scaled_sup < 0.05


def test_negative_scale_of_even_branch_needs_equal_factors(cone24):
    T = EquivariantSurface(cone=cone24, w=np.zeros((4, 4)), raw_positions=np.ones((4, 4, 3)), l=4)
    assert scale_T(T, 2.0).shape == (4, 4)
    with pytest.raises(ValueError):
        scale_T(T, -2.0)
