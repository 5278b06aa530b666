import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cylcone.errors import MassBoundFail, ResolutionExceeded, NotGraphical
from cylcone.glue_solver import build_X
from cylcone.jacobi_fields import ujacobi_coeffs, random_ujacobi_field
from cylcone.continuation_lab import (
    Region, SampledVarifold, cone_samples, graph_samples, field_graph, leaf_samples,
    surface_samples, dist_to_cone, l2_distance, d_regularized, quasi_monotonicity_constant,
    cone_mass, doubling_sequence, doubling_lower_bound_holds, build_barrier_Xeps,
    nonconcentration_experiment, blowup_degree, dist_to_T, dt3annulus_experiment,
)


@pytest.fixture(scope="module")
def cone_M(cone33):
    return cone_samples(cone33)


@pytest.fixture(scope="module")
def u3_graph(cone33):
    return graph_samples(cone33, field_graph(ujacobi_coeffs(cone33, 3), 1e-5), r_min=0.1)


def test_region_is_closed(cone33):
    pts = np.array([[1.0, 0.0, 0.0], [0.5, 0.0, 0.5], [0.0, 0.0, 2.0]])
    inside = Region(rho_max=1.0, r_min=0.5, y_abs_max=0.5).contains(pts)
    assert inside.tolist() == [True, True, False]


def test_varifold_validation(cone33):
    with pytest.raises(ValueError):
        SampledVarifold(cone33, [[1.0, 1.0, 0.0]], [0.0])
    with pytest.raises(ValueError):
        SampledVarifold(cone33, [[1.0, 1.0, 0.0]], [1.0], source="measured")
    with pytest.raises(ValueError):
        SampledVarifold(cone33, [[1.0, 1.0, 0.0]], [1.0, 2.0])


def test_cone_is_at_distance_zero(cone_M, table33):
    assert dist_to_cone(cone_M, table33) == 0.0
    assert l2_distance(cone_M, 1.0) == 0.0
    assert d_regularized(cone_M, table33, 0.5) == 0.0


def test_cone_mass_matches_samples(cone_M, cone33):
    assert_allclose(cone_M.mass(1.0), cone_mass(cone33, 1.0), rtol=1e-2)
    assert_allclose(cone_mass(cone33, 2.0), 2.0 ** cone33.n * cone_mass(cone33, 1.0))


def test_single_point_l2_distance(cone33):
    M = SampledVarifold(cone33, [[1.0, 0.0, 0.0]], [1.0])
    assert_allclose(l2_distance(M, 1.0), math.sqrt(2.0) / 2.0)
    assert l2_distance(M, 0.5) == 0.0


def test_l2_distance_scaling(u3_graph, cone33):
    lam = 2.0
    assert_allclose(l2_distance(u3_graph.scaled(lam), lam * 0.5),
                    lam ** (1.0 + cone33.n / 2.0) * l2_distance(u3_graph, 0.5), rtol=1e-12)


def test_leaf_samples_distance(table33):
    M = leaf_samples(table33, 0.01)
    assert_allclose(dist_to_cone(M, table33), 0.01, rtol=1e-3)
    M_minus = leaf_samples(table33, -0.02)
    assert_allclose(dist_to_cone(M_minus, table33), 0.02, rtol=1e-3)


def test_quasi_monotonicity_constant(cone33):
    assert quasi_monotonicity_constant(cone33, 1.0) == 1.0
    C = quasi_monotonicity_constant(cone33, 0.5, 0.05)
    assert_allclose(C, max(0.5 ** -5.0, 0.5 ** (-3.0 * 1.0025)))
    with pytest.raises(ValueError):
        quasi_monotonicity_constant(cone33, 1.5)


def test_doubling_on_cone(cone_M, table33):
    report = doubling_sequence(cone_M, table33, 0.25, 6)
    assert report.ds == [0.0] * 7
    assert all(report.flags)
    assert report.doubling_constant == 1.0
    assert math.isnan(report.degree_fit)
    assert [row[0] for row in report.rows] == list(range(7))


def test_doubling_resolution(cone_M, table33):
    with pytest.raises(ResolutionExceeded):
        doubling_sequence(cone_M, table33, 1.0, 6)


def test_doubling_lower_bound(table33, u3_graph):
    report = doubling_sequence(u3_graph, table33, 0.1, 3)
    assert all(d > 0 for d in report.ds)
    assert doubling_lower_bound_holds(report, report.doubling_constant)


def test_barrier_negativity(table33):
    barrier = build_barrier_Xeps(table33, lambda y: np.full_like(y, 4.0))
    assert barrier.negativity_certificate < 0
    assert barrier.sandwich_max <= 1.0
    assert barrier.tested_nodes > 0
    assert all(meta["side"] == "plus" for meta in barrier.barriers.values())


def test_sampled_barrier_is_negative(table33):
    barrier = build_barrier_Xeps(table33, lambda y: np.full_like(y, 0.1), eps=1e-2, K=4.0, Q=0.5,
                                 p_barrier=1, sample_grid=(64, 9))
    assert barrier.sampled
    assert barrier.surface.frame is not None
    assert barrier.negativity_certificate < 0
    assert barrier.linearized_certificate < 0
    assert barrier.sandwich_max <= 1.0
    assert barrier.tested_nodes > 0
    assert barrier.to_dict()["sampled"] is True


def test_unresolved_barrier_is_not_sampled(table33):
    with pytest.raises(ValueError):
        build_barrier_Xeps(table33, lambda y: np.full_like(y, 4.0), sample_grid=(64, 9))


def test_barrier_rejects_bad_profiles(table33):
    with pytest.raises(ValueError):
        build_barrier_Xeps(table33, lambda y: y)
    with pytest.raises(ValueError):
        build_barrier_Xeps(table33, lambda y: np.full_like(y, 20.0))
    with pytest.raises(ValueError):
        build_barrier_Xeps(table33, lambda y: np.full_like(y, 4.0), p_barrier=4)


def test_nonconcentration_on_a_leaf(table33):
    M = leaf_samples(table33, 0.05)
    report = nonconcentration_experiment(M, table33, b=0.5, s=0.1)
    assert report.fitted_A <= 1.0
    assert_allclose(report.lhs, 0.05, rtol=1e-3)


@pytest.mark.slow
@pytest.mark.parametrize("s", [0.3, 0.1, 0.03])
def test_one_constant_covers_fifty_graphs(cone33, table33, s):
    rng = np.random.default_rng(17)
    graphs = [graph_samples(cone33, field_graph(random_ujacobi_field(cone33, rng), 1e-6),
                            r_min=0.1, n_rho=32, n_phi=32) for _ in range(50)]
    grid = np.linspace(0.25, 8.0, 32)
    reports = [nonconcentration_experiment(M, table33, b=0.5, s=s, A_grid=grid) for M in graphs]
    A = max(report.fitted_A for report in reports)
    assert math.isfinite(A)
    row = int(np.flatnonzero(np.isclose(grid, A))[0])
    for report in reports:
        assert report.lhs > 0
        assert report.lhs <= report.rows[row][2]


@pytest.mark.parametrize("l", [3, 5, 7])
def test_blowup_degree_of_synthetic_graph(cone33, table33, l):
    field = ujacobi_coeffs(cone33, l)
    M = graph_samples(cone33, field_graph(field, 1e-5), r_min=0.1)
    expansion, degree, fits = blowup_degree(M, table33, [1.0, 1.25, 1.5])
    assert_allclose(degree, l - cone33.gamma)
    assert len(fits) == 3
    coefs = [c for _, _, c in expansion.terms]
    expected = [c for _, _, c in field.terms]
    assert_allclose(np.array(coefs) / coefs[0], expected, rtol=1e-2)


def test_blowup_degree_rejects_large_graphs(cone33, table33):
    with pytest.raises(NotGraphical):
        M = graph_samples(cone33, field_graph(ujacobi_coeffs(cone33, 3), 1e-1), r_min=0.1,
                          source="perturbed")
        blowup_degree(M, table33, [1.0])


def test_blowup_normalizes_on_the_unit_ball(cone33, table33):
    M = graph_samples(cone33, field_graph(ujacobi_coeffs(cone33, 3), 1e-5), r_min=0.05)
    _, _, fits = blowup_degree(M, table33, [1.0, 1.25])
    for fit in fits:
        ball = dist_to_cone(M.scaled(fit["scale"]), table33, Region(rho_max=1.0))
        annulus = dist_to_cone(M.scaled(fit["scale"]), table33, Region(rho_max=1.0, r_min=0.1))
        assert_allclose(fit["a"], ball, rtol=1e-12)
        assert fit["a"] >= annulus


@pytest.fixture(scope="module")
def X7(table33):
    return build_X(table33, 7, 1.5, 2.0)


def test_dist_to_T_of_its_own_nodes(X7, table33, cone33):
    Ns = X7.shape[0]
    pts = X7.positions[1:Ns // 2].reshape(-1, 3)
    M = SampledVarifold(cone33, pts, np.ones(len(pts)))
    assert dist_to_T(M, table33, [X7], 1.0, region=Region(rho_max=1.0)) == 0.0


def test_surface_samples(X7):
    M = surface_samples(X7)
    assert len(M) > 0
    assert np.all(M.weights > 0)
    assert M.rho_max < 0.6


def test_mass_bound_failure(cone_M, table33, X7):
    heavy = SampledVarifold(cone_M.cone, cone_M.points, 2.0 * cone_M.weights)
    with pytest.raises(MassBoundFail):
        dt3annulus_experiment(heavy, table33, [X7], 1.0, 2.0, 5.0, 0.1)
