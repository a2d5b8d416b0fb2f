import numpy as np
import pytest
import scipy.sparse as sp

from lucoda.downscale import (
    AreaSupport,
    IntegrationScheme,
    aggregation_matrix,
    integration_points,
    stacked_support_matrix,
    support_for_time,
)
from lucoda.errors import EmptyArea, OutsideMesh, UnmappedTime
from lucoda.experiments.common import VoronoiSupportRequest, voronoi_support
from lucoda.geometry import Polygon
from lucoda.spde import projection, structured_mesh

UNIT = [[0, 0], [1, 0], [1, 1], [0, 1]]


def rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


@pytest.fixture(scope="module")
def mesh():
    return structured_mesh((0, 0, 1, 1), 11, 11)


@pytest.fixture(scope="module")
def voronoi():
    sup, _, _ = voronoi_support(VoronoiSupportRequest(n_seeds=12, seed=4))
    return sup


def test_integration_points_grid():
    sc = integration_points(AreaSupport([UNIT]), density=4.0)
    assert sc.counts.tolist() == [4]
    np.testing.assert_allclose(np.sort(sc.points[0], axis=0), [[0.25, 0.25], [0.25, 0.25], [0.75, 0.75], [0.75, 0.75]])


def test_integration_points_inside_triangle():
    tri = Polygon([[0, 0], [1, 0], [0, 1]])
    sc = integration_points(AreaSupport([tri]), min_points=30)
    assert sc.counts[0] >= 30
    assert tri.contains(sc.points[0]).all()


def test_integration_points_sliver():
    sliver = [[0, 0], [1, 0], [1, 1e-4], [0, 1e-4]]
    with pytest.raises(EmptyArea):
        integration_points(AreaSupport([sliver]), density=25.0)


def test_integration_points_voronoi(voronoi):
    sc = integration_points(voronoi)
    assert np.all(sc.counts >= 25)
    for poly, pts in zip(voronoi.areas, sc.points):
        assert poly.contains(pts).all()


def test_integration_is_deterministic(voronoi):
    a = integration_points(voronoi)
    b = integration_points(voronoi)
    for p, q in zip(a.points, b.points):
        np.testing.assert_array_equal(p, q)


def test_aggregation_constant_field(mesh, voronoi):
    A = aggregation_matrix(integration_points(voronoi), mesh).A
    np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 1.0, atol=1e-10)
    np.testing.assert_allclose(A @ np.full(mesh.n_vertices, 3.7), 3.7, atol=1e-10)


def test_aggregation_single_point(mesh):
    p = np.array([[0.33, 0.61]])
    A = aggregation_matrix(IntegrationScheme((p,)), mesh).A
    np.testing.assert_allclose(A.toarray(), projection(mesh, p).A.toarray(), atol=1e-15)


def test_aggregation_two_nodes(mesh):
    p = np.array([[0.0, 0.0], [0.1, 0.0]])
    A = aggregation_matrix(IntegrationScheme((p,)), mesh).A.toarray()[0]
    expected = np.zeros(mesh.n_vertices)
    expected[[0, 1]] = 0.5
    np.testing.assert_allclose(A, expected, atol=1e-15)


def test_aggregation_outside_mesh(mesh):
    with pytest.raises(OutsideMesh):
        aggregation_matrix(IntegrationScheme((np.array([[2.0, 2.0]]),)), mesh)


@pytest.mark.parametrize("seed", [4, 6, 8])
def test_refinement_consistency(mesh, seed):
    sup, _, _ = voronoi_support(VoronoiSupportRequest(n_seeds=12, seed=seed))
    f = lambda v: 1.0 + v[:, 0] * v[:, 1] + 0.5 * v[:, 0]
    u = f(mesh.vertices)
    for kw, kw2 in (({"min_points": 25}, {"min_points": 50}), ({"density": 300.0}, {"density": 600.0})):
        a = aggregation_matrix(integration_points(sup, **kw), mesh) @ u
        b = aggregation_matrix(integration_points(sup, **kw2), mesh) @ u
        assert np.max(np.abs(a - b) / np.abs(b)) < 0.01


def test_nesting(mesh):
    f = lambda v: 1.0 + v[:, 0] * v[:, 1] + 0.5 * v[:, 0]
    u = f(mesh.vertices)
    whole = AreaSupport([rect(0.1, 0.1, 0.9, 0.6)])
    parts = AreaSupport([rect(0.1, 0.1, 0.3, 0.6), rect(0.3, 0.1, 0.9, 0.6)])
    c = aggregation_matrix(integration_points(whole), mesh) @ u
    s = aggregation_matrix(integration_points(parts), mesh) @ u
    w = parts.measures / parts.measures.sum()
    assert abs(c[0] - w @ s) / abs(c[0]) < 0.02


def test_support_for_time():
    s1 = AreaSupport([UNIT], period=(0, 1))
    s2 = AreaSupport([UNIT], period=(2, None))
    assert support_for_time([s1, s2], 1) == 0
    assert support_for_time([s1, s2], 7) == 1
    with pytest.raises(UnmappedTime):
        support_for_time([s1, AreaSupport([UNIT], period=(1, 3))], 1)
    with pytest.raises(UnmappedTime):
        support_for_time([AreaSupport([UNIT], period=(1, 3))], 0)


def test_stacked_single_time_reduces(mesh, voronoi):
    sc = integration_points(voronoi)
    st = stacked_support_matrix([voronoi], mesh, [0], schemes=[sc])
    np.testing.assert_allclose(st.A.toarray(), aggregation_matrix(sc, mesh).A.toarray(), atol=1e-15)


def test_stacked_two_supports(mesh, voronoi):
    halves = AreaSupport([rect(0, 0, 0.5, 1), rect(0.5, 0, 1, 1)], period=(1, 1))
    first = AreaSupport(voronoi.areas, period=(0, 0))
    st = stacked_support_matrix([first, halves], mesh, [0, 1])
    m = mesh.n_vertices
    assert st.A.shape == (voronoi.n_areas + 2, 2 * m)
    np.testing.assert_array_equal(st.row_support, [0] * voronoi.n_areas + [1, 1])
    # each row only touches columns of its own time knot
    coo = st.A.tocoo()
    np.testing.assert_array_equal(coo.col % 2, st.row_time[coo.row])
    # with a field that depends only on time, every row returns its knot's value
    x = np.tile([2.0, -1.0], m)
    np.testing.assert_allclose(st.A @ x, np.where(st.row_time == 0, 2.0, -1.0), atol=1e-10)
    # block-diagonal after reordering the columns time-major
    perm = (np.arange(m)[None, :] * 2 + np.arange(2)[:, None]).ravel()
    B = st.A[:, perm].toarray()
    n0 = voronoi.n_areas
    assert np.all(B[:n0, m:] == 0) and np.all(B[n0:, :m] == 0)


def test_stacked_unmapped(mesh):
    s = AreaSupport([UNIT], period=(0, 0))
    with pytest.raises(UnmappedTime):
        stacked_support_matrix([s], mesh, [0, 1])
