import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inclusion_fwi.geometry import (
    DEFAULT_RECT, TRUE_INCLUSION, GeometryError, InclusionParams, LayeredModel, Nondimensionalizer, Rect,
    default_model, ellipse_point, ellipse_quadratic, ellipse_sd, inside_ellipse, material_at,
    nondimensionalize, rect_sd, region_labels, scene_signed_distances,
)


def test_material_inside_true_inclusion():
    rho, chi = material_at(default_model(), TRUE_INCLUSION, (0.0, -1.45))
    assert rho == 2.1
    assert chi == pytest.approx(40.656, abs=1e-12)


def test_material_first_layer():
    assert material_at(default_model(), TRUE_INCLUSION, (1.0, -0.2)) == (2.0, 4.5)


def test_interface_point_goes_to_layer_above():
    m = default_model()
    y = m.interfaces[0]
    assert material_at(m, None, (0.3, y))[0] == m.rho[0]
    assert material_at(m, None, (0.3, y - 1e-9))[0] == m.rho[1]


def test_material_outside_rect_raises():
    with pytest.raises(GeometryError):
        material_at(default_model(), None, (2.0, -1.0))


@given(st.floats(-np.pi, np.pi))
def test_center_is_inside_for_any_angle(theta):
    inc = InclusionParams(0.1, -1.0, 0.4, 0.2, theta, 2.0, 3.0)
    assert inside_ellipse(inc, inc.center)
    assert material_at(default_model(), inc, inc.center)[0] == 2.0


def test_inside_ellipse_boundary_and_outside():
    flat = InclusionParams(0.0, -1.45, 0.5, 0.1, 0.0, 2.1, 4.4)
    assert inside_ellipse(flat, (0.5, -1.45))
    assert not inside_ellipse(flat, (0.51, -1.45))


@given(st.floats(-3, 3), st.floats(-3, 0), st.floats(-np.pi, np.pi))
def test_inside_ellipse_half_turn_invariant(x, y, theta):
    inc = InclusionParams(0.0, -1.5, 0.6, 0.25, theta, 2.0, 3.0)
    rot = InclusionParams(0.0, -1.5, 0.6, 0.25, theta + np.pi, 2.0, 3.0)
    q1, q2 = ellipse_quadratic(inc, (x, y))[0], ellipse_quadratic(rot, (x, y))[0]
    assert q1 == pytest.approx(q2, rel=1e-9, abs=1e-9)


def test_host_material_inclusion_is_invisible():
    m = default_model()
    inc = InclusionParams(0.0, -1.45, 0.5, 0.1, 0.3, m.rho[2], m.v_p[2])
    p = np.random.default_rng(0).uniform([-1.5, -3.0], [1.5, 0.0], (2000, 2))
    r1, c1 = material_at(m, inc, p)
    r0, c0 = material_at(m, None, p)
    assert np.array_equal(r1, r0) and np.array_equal(c1, c0)


def test_nondimensionalize():
    nd = Nondimensionalizer(1.0, 1000.0, 1000.0)
    assert nondimensionalize(nd, 2100.0, 4400.0) == pytest.approx((2.1, 4.4))
    assert nondimensionalize(nd, 1000.0, 1000.0) == (1.0, 1.0)
    assert nondimensionalize(nd, 2000.0, 1500.0) == (2.0, 1.5)
    with pytest.raises(GeometryError):
        nondimensionalize(nd, -1.0, 1.0)
    with pytest.raises(GeometryError):
        Nondimensionalizer(0.0, 1.0, 1.0)


def test_layered_model_validation():
    with pytest.raises(GeometryError):
        LayeredModel(DEFAULT_RECT, (-1.0, -0.5), (1, 1, 1), (1, 1, 1))
    with pytest.raises(GeometryError):
        LayeredModel(DEFAULT_RECT, (-1.0,), (1, 1, 1), (1, 1, 1))


def test_rect_signed_distance():
    sd = rect_sd(DEFAULT_RECT)
    assert abs(sd((0.0, 0.0))[0]) < 1e-12
    assert sd((0.0, -1.5))[0] == pytest.approx(-1.5)
    assert sd((2.0, -1.5))[0] == pytest.approx(0.5)


def test_single_region_without_layers():
    m = LayeredModel(DEFAULT_RECT, (), (2.0,), (1.5,))
    regions = scene_signed_distances(m, None)
    assert len(regions) == 1 and regions[0]((0.0, -1.5))[0] < 0


def _bisection_distance(inc, p, n=20001):
    """Brute-force distance to a dense boundary polyline (independent oracle)."""
    t = np.linspace(0, 2 * np.pi, n)
    b = ellipse_point(inc, t)
    return np.min(np.hypot(b[:, 0] - p[0], b[:, 1] - p[1]))


def test_ellipse_distance_against_dense_sampling():
    inc = TRUE_INCLUSION
    rng = np.random.default_rng(1)
    sd = ellipse_sd(inc)
    p = inc.center + rng.uniform(-0.7, 0.7, (300, 2))
    d = sd(p)
    oracle = np.array([_bisection_distance(inc, q) for q in p])
    band = (np.abs(d) < 0.1) & (oracle > 1e-3)
    assert band.sum() > 30
    # the polyline oracle itself is only accurate to a few 1e-6
    assert np.max(np.abs(np.abs(d) - oracle)) < 5e-5
    assert np.max(np.abs(np.abs(d[band]) - oracle[band]) / oracle[band]) < 0.05
    assert np.all((d < 0) == (ellipse_quadratic(inc, p) < 1))


def test_ellipse_distance_zero_on_boundary():
    t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    assert np.max(np.abs(ellipse_sd(TRUE_INCLUSION)(ellipse_point(TRUE_INCLUSION, t)))) < 1e-12


def test_scene_regions_partition_rect():
    m = default_model()
    regions = scene_signed_distances(m, TRUE_INCLUSION)
    assert len(regions) == 6
    p = np.random.default_rng(2).uniform([-1.5, -3.0], [1.5, 0.0], (10_000, 2))
    member = np.column_stack([r(p) <= 1e-9 for r in regions])
    assert np.all(member.sum(axis=1) >= 1)
    # only points within tolerance of an interface are counted twice
    twice = member.sum(axis=1) > 1
    assert twice.sum() == 0
    labels = region_labels(m, TRUE_INCLUSION, p)
    assert np.array_equal(np.argmax(member, axis=1), labels)


def test_scene_region_areas_sum_to_rect():
    m = default_model()
    regions = scene_signed_distances(m, TRUE_INCLUSION)
    p = np.random.default_rng(3).uniform([-1.5, -3.0], [1.5, 0.0], (1_000_000, 2))
    frac = np.array([(r(p) <= 0).mean() for r in regions])
    assert frac.sum() * 9.0 == pytest.approx(9.0, abs=1e-6)
    area_ellipse = np.pi * 0.5 * 0.1
    assert frac[-1] * 9.0 == pytest.approx(area_ellipse, rel=0.03)


def test_inclusion_touching_boundary_rejected():
    inc = InclusionParams(1.2, -1.0, 0.5, 0.1, 0.0, 2.0, 3.0)
    with pytest.raises(GeometryError):
        scene_signed_distances(default_model(), inc)


def test_inclusion_params_round_trip():
    nu = TRUE_INCLUSION.to_array()
    assert InclusionParams.from_array(nu) == TRUE_INCLUSION
    with pytest.raises(ValueError):
        InclusionParams.from_array(nu[:6])


@settings(max_examples=30)
@given(st.floats(0.05, 0.6), st.floats(0.05, 1.0), st.floats(-1.5, 1.5))
def test_ellipse_distance_is_one_lipschitz(a, ratio, theta):
    inc = InclusionParams(0.0, -1.5, a, a * ratio, theta, 2.0, 3.0)
    sd = ellipse_sd(inc)
    rng = np.random.default_rng(0)
    p = rng.uniform(-0.8, 0.8, (200, 2)) + inc.center
    q = p + rng.normal(0, 0.01, p.shape)
    assert np.all(np.abs(sd(p) - sd(q)) <= np.hypot(*(p - q).T) * (1 + 1e-6) + 1e-9)
