import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cylcone.config import POLAR_TABLE_FLOOR
from cylcone.errors import OutOfTable
from cylcone.foliation import (
    profile_residual, fitted_decay_exponent, graph_decay_exponents, leaf_H, leaf_parameter,
    build_Fa, cone_residual,
)


@pytest.mark.parametrize("side", ["plus", "minus"])
def test_leaf_satisfies_profile_equation(table33, side):
    leaf = table33.leaf(side)
    assert profile_residual(leaf) < 1e-6
    assert leaf.normalized


def test_leaf_decays_like_r_minus_gamma(table33, cone33):
    leaf = table33.leaf("plus")
    assert_allclose(fitted_decay_exponent(leaf), -cone33.gamma, rtol=0.02)
    value, first, second = graph_decay_exponents(leaf)
    assert_allclose(value, -cone33.gamma, rtol=0.05)
    assert first < value
    assert second < first


def test_leaves_sit_on_either_side_of_the_cone(table33, cone33):
    plus, minus = table33.leaf("plus"), table33.leaf("minus")
    d_plus = plus.v * math.cos(cone33.alpha) - plus.u * math.sin(cone33.alpha)
    d_minus = minus.v * math.cos(cone33.alpha) - minus.u * math.sin(cone33.alpha)
    assert np.all(d_plus > 0)
    assert np.all(d_minus < 0)


def test_minus_leaf_is_reflection_when_p_equals_q(table33):
    plus, minus = table33.leaf("plus"), table33.leaf("minus")
    assert_allclose(minus.u, plus.v)
    assert_allclose(minus.v, plus.u)


def test_cone_ray_is_a_solution(cone33):
    assert cone_residual(cone33, np.linspace(0.1, 10.0, 50)) < 1e-12


def test_leaf_H_zero_is_the_cone(table33):
    cone_leaf = leaf_H(table33, 0.0)
    assert cone_leaf.side == "cone"
    assert_allclose(cone_leaf.v[1:] / cone_leaf.u[1:], math.tan(table33.cone.alpha))


@pytest.mark.parametrize("t", [0.3, -0.02, 1.0])
def test_leaf_parameter_round_trip(table33, t):
    leaf = leaf_H(table33, t)
    idx = np.linspace(1, len(leaf.s) // 4, 40).astype(int)
    recovered = leaf_parameter(table33, leaf.u[idx], leaf.v[idx])
    assert_allclose(recovered, t, rtol=1e-3)


def test_leaf_parameter_scales_homogeneously(table33, cone33):
    u, v = 0.9, 0.4
    t = leaf_parameter(table33, u, v)
    assert_allclose(leaf_parameter(table33, 2.0 * u, 2.0 * v), t * 2.0 ** (cone33.gamma + 1),
                    rtol=1e-6)


def test_leaf_parameter_outside_quadrant(table33):
    with pytest.raises(OutOfTable):
        leaf_parameter(table33, -1.0, 1.0)
    with pytest.raises(ValueError):
        leaf_parameter(table33, 0.0, 0.0)


@pytest.mark.parametrize("side", ["plus", "minus"])
def test_polar_table_reaches_the_floor(table33, side):
    tab = table33.polar_radius[side]
    assert tab["x_min"] < math.log(POLAR_TABLE_FLOOR)
    assert tab["x_max"] > tab["x_min"]


@pytest.mark.parametrize("offset", [1e-14, -1e-14])
def test_angles_below_the_table_floor_are_refused(table33, cone33, offset):
    phi = cone33.alpha + offset
    with pytest.raises(OutOfTable):
        leaf_parameter(table33, math.cos(phi), math.sin(phi))
    t = leaf_parameter(table33, math.cos(phi), math.sin(phi), floor_bound=True)
    assert 0 < abs(t) < 2.0 * POLAR_TABLE_FLOOR


@pytest.mark.parametrize("offset", [1e-12, -1e-12, 1e-9])
def test_leaf_parameter_near_the_cone_follows_the_far_field(table33, cone33, offset):
    # unit radius: H(t) sits at distance t r^-gamma from the cone
    phi = cone33.alpha + offset
    t = leaf_parameter(table33, math.cos(phi), math.sin(phi))
    assert_allclose(t, math.sin(offset), rtol=1e-2)


def test_points_on_the_cone_have_parameter_zero(table33, cone33):
    r = np.array([0.5, 1.0, 7.0])
    t = leaf_parameter(table33, r * math.cos(cone33.alpha), r * math.sin(cone33.alpha))
    assert np.all(t == 0)


def test_leaf_parameter_is_monotone_along_rays(table33):
    phis = np.linspace(0.0, 0.5 * math.pi, 1002)[1:-1]
    radii = np.geomspace(1e-2, 1e2, 100)
    t = leaf_parameter(table33, np.outer(radii, np.cos(phis)), np.outer(radii, np.sin(phis)))
    assert np.all(np.sign(t) == np.sign(t[0]))
    assert np.all(t[0] != 0)
    assert np.all(np.diff(np.abs(t), axis=0) > 0)


@pytest.mark.parametrize("a", [1.0, 0.0])
def test_subsolution_barrier_certificate(table33, cone33, a):
    barrier = build_Fa(cone33, table33.leaf("plus"), a, "subsolution")
    assert barrier.sign_certificate > 0
    assert np.all(barrier.values > 0)


def test_barrier_degree_ranges(table33, cone33):
    leaf = table33.leaf("plus")
    with pytest.raises(ValueError):
        build_Fa(cone33, leaf, -cone33.gamma, "subsolution")
    with pytest.raises(ValueError):
        build_Fa(cone33, leaf, 0.0, "supersolution")
    with pytest.raises(ValueError):
        build_Fa(cone33, leaf, 1.0, "sideways")
