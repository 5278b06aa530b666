import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cylcone.cone_spectra import make_cone, invariant_growth_rates, select_lambda
from cylcone.errors import HypothesisFail, DivergentNorm
from cylcone.jacobi_fields import (
    JacobiFieldExpansion, ThreeAnnulusCase, ujacobi_coeffs, apply_cylinder_jacobi, evaluate_field,
    mode_field, homogeneous_mode, ball_norm, ball_norm_quadrature, annulus_norms,
    three_annulus_report, quantitative_three_annulus, scale_to_hypotheses, smallest_exponent_A,
    random_mode_suite, log_convexity_profile, l2_linfty_constant,
)


def test_u3_coefficients(cone33):
    field = ujacobi_coeffs(cone33, 3)
    assert field.exact
    assert [c for _, _, c in field.terms] == [1.0, -1.0]
    assert [(k, l) for k, l, _ in field.terms] == [(0, 3), (1, 1)]
    assert apply_cylinder_jacobi(field).terms == ()


def test_u7_coefficients(cone33):
    # y^7 r^-2 - 7 y^5 + 7 r^2 y^3 - r^4 y
    field = ujacobi_coeffs(cone33, 7)
    assert_allclose([c for _, _, c in field.terms], [1.0, -7.0, 7.0, -1.0])


@pytest.mark.parametrize("p,q", [(3, 3), (2, 4), (2, 5), (4, 4)])
def test_recurrence_residual(p, q):
    cone = make_cone(p, q)
    for l in range(13):
        field = ujacobi_coeffs(cone, l, warn=False)
        residual = apply_cylinder_jacobi(field)
        worst = max((abs(c) for _, _, c in residual.terms), default=0.0)
        assert worst < 1e-10 * max(field.coef_norm, 1.0)


def test_evaluate_field(cone33):
    field = ujacobi_coeffs(cone33, 3)
    values = evaluate_field(field, np.array([1.0, 2.0]), np.array([2.0, 1.0]))
    # y^3 r^-2 - y
    assert_allclose(values["u"], [6.0, -0.75])
    assert_allclose(values["du_dr"], [-16.0, -0.25])
    assert_allclose(values["du_dy"], [11.0, -0.25])


def test_field_solves_jacobi_equation_pointwise(cone33):
    # finite-difference check of u_rr + (n-2)/r u_r + (n-2)/r^2 u + u_yy = 0 on C x R
    field = ujacobi_coeffs(cone33, 5)
    r, y, h = 0.7, 0.4, 1e-4
    u = lambda rr, yy: float(evaluate_field(field, rr, yy)["u"])
    u_rr = (u(r + h, y) - 2 * u(r, y) + u(r - h, y)) / h ** 2
    u_yy = (u(r, y + h) - 2 * u(r, y) + u(r, y - h)) / h ** 2
    u_r = float(evaluate_field(field, r, y)["du_dr"])
    n = cone33.n
    lhs = u_rr + (n - 2) / r * u_r + (n - 2) / r ** 2 * u(r, y) + u_yy
    assert abs(lhs) < 1e-4 * max(abs(u_rr), 1.0)


def test_homogeneous_mode(cone33):
    field = ujacobi_coeffs(cone33, 7)
    mode = homogeneous_mode(field)
    degree, coef = mode.modes[0]
    assert_allclose(degree, 7 - cone33.gamma)
    assert coef > 0
    assert_allclose(ball_norm(mode, 0.8), ball_norm(field, 0.8), rtol=1e-8)


def test_homogeneous_mode_rejects_mixed_degrees(cone33):
    mixed = JacobiFieldExpansion(cone=cone33, terms=((0, 3, 1.0), (0, 1, 1.0)))
    with pytest.raises(ValueError):
        homogeneous_mode(mixed)


def test_mode_field_needs_growth_rates(cone33):
    mode_field(cone33, [(1.0, 2.0), (3.0, -1.0)])
    with pytest.raises(ValueError):
        mode_field(cone33, [(1.5, 1.0)])


def test_ball_norm_closed_form_matches_quadrature(cone33):
    field = mode_field(cone33, [(-2.0, 0.3), (1.0, 2.0), (5.0, -1.0)])
    for s in (1.0, 0.5, 0.1):
        assert_allclose(ball_norm(field, s), ball_norm_quadrature(field, s), rtol=1e-10)
    # the constant field has unit norm on B_1
    assert_allclose(ball_norm(mode_field(cone33, [(0.0, 1.0)]), 1.0), 1.0)


def test_divergent_norm(cone33):
    bad = JacobiFieldExpansion(cone=cone33, modes=((-5.0, 1.0),))
    with pytest.raises(DivergentNorm):
        ball_norm(bad, 1.0)


def test_annulus_norms_of_single_mode_are_geometric(cone33):
    field = mode_field(cone33, [(3.0, 1.0)])
    seq = annulus_norms(field, 0.5, 4)
    ratios = np.array(seq.norms[1:]) / np.array(seq.norms[:-1])
    assert_allclose(ratios, 0.5 ** 3.0)


def test_three_annulus_report_growth_case(cone33):
    d = 3.0
    seq = annulus_norms(mode_field(cone33, [(d, 1.0)]), 0.5, 2)
    report = three_annulus_report(seq, d + 0.5, 0.1, 0.2)
    assert report.hypothesis_i and report.conclusion_i
    assert report.implication_i and report.implication_ii
    assert not report.hypothesis_ii
    assert report.case == ThreeAnnulusCase.CASE_I
    with pytest.raises(ValueError):
        three_annulus_report(seq, d, 0.2, 0.1)


@pytest.mark.parametrize("d", [1.0, 4.0])
def test_three_annulus_dichotomy_over_random_fields(cone33, d):
    degrees = invariant_growth_rates(cone33, 10.0).degrees
    assert np.any(np.isclose(degrees, d))
    cases = set()
    for field in random_mode_suite(cone33, 1000, seed=13, exclude_degree=d):
        report = three_annulus_report(annulus_norms(field, 0.5, 2), d, 0.1, 0.2)
        assert report.case != ThreeAnnulusCase.NEITHER
        cases.add(report.case)
    assert ThreeAnnulusCase.CASE_I in cases
    assert ThreeAnnulusCase.CASE_II in cases


@pytest.fixture(scope="module")
def lam33(cone33):
    return select_lambda(invariant_growth_rates(cone33, 40.0), 0.1, 1.0)


def test_quantitative_three_annulus_suite(cone33, lam33):
    suite = [scale_to_hypotheses(f, lam33) for f in random_mode_suite(cone33, 300, seed=7)]
    failures = 0
    for field in suite:
        try:
            report = quantitative_three_annulus(field, lam33, 2.0)
        except HypothesisFail:
            continue
        failures += 0 if report.holds else 1
    assert failures == 0
    assert smallest_exponent_A(suite, lam33) <= 2.0


@pytest.mark.slow
def test_fitted_exponent_covers_a_thousand_fields(cone33, lam33):
    suite = [scale_to_hypotheses(f, lam33) for f in random_mode_suite(cone33, 1000, seed=19)]
    A = smallest_exponent_A(suite, lam33)
    assert math.isfinite(A)
    checked = 0
    for field in suite:
        try:
            report = quantitative_three_annulus(field, lam33, A + 1e-6)
        except HypothesisFail:
            continue
        assert report.holds
        checked += 1
    assert checked > 0


def test_hypothesis_fail(cone33, lam33):
    with pytest.raises(HypothesisFail):
        quantitative_three_annulus(mode_field(cone33, [(0.0, 10.0)]), lam33, 2.0)


def test_random_suite_is_seeded(cone33):
    a = random_mode_suite(cone33, 20, seed=3)
    b = random_mode_suite(cone33, 20, seed=3)
    assert a == b
    assert a != random_mode_suite(cone33, 20, seed=4)


def test_log_convexity(cone33):
    t_grid = np.linspace(0.0, 2.0, 21)
    single = log_convexity_profile(mode_field(cone33, [(2.0, 1.5)]), t_grid)
    assert max(abs(x) for x in single) < 1e-12
    for field in random_mode_suite(cone33, 50, seed=11):
        assert min(log_convexity_profile(field, t_grid)) >= -1e-9


def test_l2_linfty_constant_is_finite(cone33):
    C = l2_linfty_constant(cone33, cases=10, seed=5)
    assert 0 < C < math.inf
