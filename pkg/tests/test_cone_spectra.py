import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cylcone.cone_spectra import (
    make_cone, indicial_roots, indicial_residual, link_eigenvalues, sturm_liouville_link_eigenvalues,
    invariant_growth_rates, weyl_count, select_lambda, lambda_gap, cylinder_link_eigenvalue,
    forbidden_interval, stability_margin, spectrum_report,
)
from cylcone.errors import InvalidDimension, UnstableCone, GapUnattainable


def test_gamma_of_simons_type_cones():
    assert make_cone(3, 3).gamma == 2.0
    assert_allclose(make_cone(2, 5).gamma, 3.0 - math.sqrt(2.0), atol=1e-12)


@pytest.mark.parametrize("p,q", [(3, 3), (2, 4), (2, 5), (4, 4)])
def test_indicial_residual(p, q):
    cone = make_cone(p, q)
    for pair in link_eigenvalues(cone, 2, 2):
        if pair.real:
            assert indicial_residual(cone, pair) < 1e-12
    # gamma is the smaller root for the first invariant eigenvalue
    assert_allclose(indicial_roots(cone, cone.lambda1).gamma_minus, cone.gamma, atol=1e-12)


def test_invalid_and_unstable_cones():
    with pytest.raises(InvalidDimension):
        make_cone(0, 3)
    with pytest.raises(UnstableCone):
        make_cone(2, 2)


def test_alpha_and_stability(cone33):
    assert_allclose(cone33.alpha, math.pi / 4)
    assert cone33.n == 8
    assert stability_margin(cone33) > 0
    lo, hi = forbidden_interval(cone33)
    assert_allclose((lo, hi), (-3.0, -2.0))


@pytest.mark.parametrize("p,q", [(3, 3), (2, 4), (4, 4)])
def test_sturm_liouville_cross_check(p, q):
    cone = make_cone(p, q)
    assert cone.lambda1 == -2.0 * (cone.n - 2)
    mu = sturm_liouville_link_eigenvalues(cone, "p", 2)
    assert_allclose(mu[0], cone.lambda1, rtol=1e-3)
    # first zonal harmonic on S^p(a): p / a^2 = p + q
    assert_allclose(mu[1], cone.lambda1 + p + q, rtol=1e-3)


def test_c_coefficient_roots(cone33):
    g = cone33.gamma
    assert_allclose(cone33.c_coefficient(-g), 0.0, atol=1e-12)
    assert_allclose(cone33.c_coefficient(g - (cone33.n - 3)), 0.0, atol=1e-12)
    assert cone33.c_coefficient(1.0 - g) > 0


def test_growth_rate_table(cone33):
    table = invariant_growth_rates(cone33, 10.0)
    assert_allclose(table.degrees[:3], (-2.0, -1.0, 0.0))
    assert table.contains(5.0)
    assert not table.contains(5.5)
    assert weyl_count(table, 1.0) == 4
    with pytest.raises(ValueError):
        invariant_growth_rates(cone33, -5.0)


def test_cylinder_link_eigenvalue_inverts_degree(cone33):
    n = cone33.n
    for degree in (-2.0, 1.0, 5.0):
        sigma = cylinder_link_eigenvalue(cone33, degree)
        assert_allclose((2 - n) / 2.0 + math.sqrt(sigma + n * n / 4.0), degree, atol=1e-12)


def test_select_lambda(cone33):
    table = invariant_growth_rates(cone33, 40.0)
    lam = select_lambda(table, 0.1, 1.0)
    assert 0.05 <= lam <= 0.1
    gap = lambda_gap(table, lam, 0.1)
    assert gap >= lam ** (cone33.n - 2)
    # no grid candidate does better
    for other in np.linspace(0.05, 0.1, 11):
        assert lambda_gap(table, other, 0.1) <= gap + 1e-9


def test_select_lambda_rejects_bad_input(cone33):
    table = invariant_growth_rates(cone33, 40.0)
    with pytest.raises(ValueError):
        select_lambda(table, 0.6, 1.0)
    with pytest.raises(ValueError):
        select_lambda(table, 0.1, 0.0)
    with pytest.raises(GapUnattainable):
        select_lambda(table, 0.1, 1e-30)


def test_gap_threshold_scales_with_lambda(cone33):
    table = invariant_growth_rates(cone33, 40.0)
    lam = select_lambda(table, 0.1, 1.0)
    critical = lam ** (cone33.n - 2) / lambda_gap(table, lam, 0.1)
    assert_allclose(select_lambda(table, 0.1, 1.01 * critical), lam)
    with pytest.raises(GapUnattainable) as excinfo:
        select_lambda(table, 0.1, 0.99 * critical)
    assert_allclose(excinfo.value.best_gap, lambda_gap(table, lam, 0.1), rtol=1e-9)


def test_spectrum_report_is_json_ready(cone33):
    report = spectrum_report(cone33)
    assert report["gamma"] == 2.0
    assert report["pairs"][0]["lambda"] == pytest.approx(cone33.lambda1)
