import numpy as np
import pytest

from inclusion_fwi.geometry import (
    DEFAULT_RECT, TRUE_INCLUSION, InclusionParams, LayeredModel, Rect, default_model, ellipse_point,
    ellipse_sd, scene_signed_distances,
)
from inclusion_fwi.mesh import (
    ABSORBING, SURFACE, MeshConfigError, MeshError, MeshSpec, adapted_mesh, build_mesh, conformity_check,
    read_mesh, stratified_mesh, topology_audit, triangle_areas, triangle_quality, uniform_mesh, write_mesh,
)


@pytest.fixture(scope="module")
def adapted_default():
    return adapted_mesh(MeshSpec("adapted", 0.04, default_model(), TRUE_INCLUSION))


def test_uniform_counts_default_scene():
    m = uniform_mesh(MeshSpec("uniform", 0.04, default_model()))
    assert m.n_points == 5776 and m.n_triangles == 11250
    assert triangle_areas(m.points, m.triangles).sum() == pytest.approx(9.0, rel=1e-10)
    assert topology_audit(m) == []


def test_uniform_unit_square():
    model = LayeredModel(Rect(0, 1, -1, 0), (), (1.0,), (1.0,))
    m = uniform_mesh(MeshSpec("uniform", 1.0, model))
    assert m.n_points == 4 and m.n_triangles == 2


def test_uniform_indivisible_side_names_dimension():
    with pytest.raises(MeshConfigError, match="x"):
        uniform_mesh(MeshSpec("uniform", 0.08, default_model()))


def test_uniform_mesh_not_conforming_to_ellipse():
    m = uniform_mesh(MeshSpec("uniform", 0.04, default_model(), TRUE_INCLUSION))
    rep = conformity_check(m, scene_signed_distances(default_model(), TRUE_INCLUSION))
    assert not rep.ok and len(rep.violating_triangles) > 0


def test_stratified_rows_contain_interface():
    model = LayeredModel(Rect(0, 1, -2, 0), (-1.0,), (1.0, 2.0), (1.0, 2.0))
    m = stratified_mesh(MeshSpec("stratified", 0.5, model))
    assert np.allclose(np.unique(m.points[:, 1]), [-2, -1.5, -1, -0.5, 0])
    ys = m.points[m.triangles, 1]
    assert not np.any((ys.min(axis=1) < -1) & (ys.max(axis=1) > -1))


def test_stratified_default_scene_conforms_to_layers():
    model = default_model()
    m = stratified_mesh(MeshSpec("stratified", 0.04, model))
    assert conformity_check(m, scene_signed_distances(model, None)).ok
    assert topology_audit(m) == []


def test_stratified_without_interfaces_equals_uniform():
    model = LayeredModel(DEFAULT_RECT, (), (2.0,), (1.5,))
    a = stratified_mesh(MeshSpec("stratified", 0.1, model))
    b = uniform_mesh(MeshSpec("uniform", 0.1, model))
    assert np.allclose(a.points, b.points) and np.array_equal(a.triangles, b.triangles)


def test_stratified_rejects_close_interfaces():
    model = LayeredModel(DEFAULT_RECT, (-1.0, -1.01), (1, 2, 3), (1, 2, 3))
    with pytest.raises(MeshConfigError):
        stratified_mesh(MeshSpec("stratified", 0.04, model))


def test_boundary_edge_kinds():
    m = uniform_mesh(MeshSpec("uniform", 0.5, default_model()))
    surf = m.edges[m.edge_kinds == SURFACE]
    assert np.all(m.points[surf][:, :, 1] == 0.0)
    assert len(surf) == 6
    absorbing = m.edges[m.edge_kinds == ABSORBING]
    assert len(absorbing) == 6 + 2 * 6


def _circle_scene(theta):
    model = LayeredModel(Rect(-0.5, 0.5, -1.0, 0.0), (), (1.0,), (1.0,))
    inc = InclusionParams(0.0, -0.5, 0.3, 0.3, theta, 2.0, 2.0)
    return model, inc


def test_adapted_circle_quality_and_conformity():
    model, inc = _circle_scene(0.0)
    m = adapted_mesh(MeshSpec("adapted", 0.1, model, inc))
    assert conformity_check(m, scene_signed_distances(model, inc)).ok
    assert triangle_quality(m.points, m.triangles).min() > 0.5
    assert topology_audit(m) == []


def test_adapted_circle_independent_of_angle():
    m1 = adapted_mesh(MeshSpec("adapted", 0.1, *_circle_scene(0.0)))
    m2 = adapted_mesh(MeshSpec("adapted", 0.1, *_circle_scene(0.7)))
    assert np.array_equal(m1.points, m2.points) and np.array_equal(m1.triangles, m2.triangles)


def test_adapted_default_scene(adapted_default):
    m = adapted_default
    model = default_model()
    assert conformity_check(m, scene_signed_distances(model, TRUE_INCLUSION)).ok
    assert triangle_quality(m.points, m.triangles).min() > 0.3
    assert topology_audit(m) == []
    assert triangle_areas(m.points, m.triangles).sum() == pytest.approx(9.0, rel=1e-10)
    inc_area = m.areas()[m.labels == model.n_layers].sum()
    assert inc_area == pytest.approx(np.pi * 0.5 * 0.1, rel=0.02)


def test_adapted_interface_vertices_on_ellipse(adapted_default):
    m = adapted_default
    model = default_model()
    sd = ellipse_sd(TRUE_INCLUSION)
    inc_tri = m.triangles[m.labels == model.n_layers]
    out_tri = m.triangles[m.labels != model.n_layers]
    shared = np.intersect1d(inc_tri, out_tri)
    assert np.max(np.abs(sd(m.points[shared]))) < 1e-2 * 0.04
    # 256 boundary samples: each within one local node spacing of a vertex
    samples = ellipse_point(TRUE_INCLUSION, np.linspace(0, 2 * np.pi, 256, endpoint=False))
    d = np.min(np.hypot(*(samples[:, None, :] - m.points[shared][None, :, :]).transpose(2, 0, 1)), axis=1)
    assert d.max() < 0.04


def test_adapted_requires_inclusion_clearance():
    # clearance 0.05 < 2h
    inc = InclusionParams(1.05, -1.0, 0.4, 0.1, 0.0, 2.0, 3.0)
    with pytest.raises(ValueError, match="clear"):
        adapted_mesh(MeshSpec("adapted", 0.04, default_model(), inc))


def test_build_mesh_dispatch():
    m = build_mesh(MeshSpec("uniform", 0.5, default_model()))
    assert m.n_points == 7 * 7


def test_mesh_text_round_trip(tmp_path):
    m = stratified_mesh(MeshSpec("stratified", 0.25, default_model()))
    write_mesh(m, tmp_path / "m.txt")
    first = (tmp_path / "m.txt").read_text().splitlines()[0]
    assert first == f"points {m.n_points} / triangles {m.n_triangles}"
    r = read_mesh(tmp_path / "m.txt")
    assert np.allclose(r.points, m.points) and np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.labels, m.labels)
