import math

import numpy as np
import pytest
from scipy.special import gamma, kv

from lucoda.errors import DegenerateBox, DegenerateTriangle, MeshError
from lucoda.sparse import CholeskyFactor
from lucoda.spde import (
    SpdeParams,
    TriMesh,
    assemble_fem,
    matern_correlation,
    projection,
    sample_gmrf,
    spde_precision,
    structured_mesh,
)

UNIT_TRI = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
G_UNIT = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])


def test_structured_mesh_counts():
    m = structured_mesh((0, 0, 1, 1), 2, 2)
    assert (m.n_vertices, m.n_triangles) == (4, 2)
    m = structured_mesh((0, 0, 1, 1), 3, 3)
    assert (m.n_vertices, m.n_triangles) == (9, 8)
    m = structured_mesh((-1, 2, 4, 5), 7, 5)
    assert m.areas().sum() == pytest.approx(15.0, abs=1e-12)
    assert np.all(m.areas() > 0)


def test_structured_mesh_degenerate_box():
    with pytest.raises(DegenerateBox):
        structured_mesh((0, 0, 0, 1), 3, 3)


def test_mesh_validation():
    with pytest.raises(DegenerateTriangle):
        TriMesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        TriMesh([[0, 0], [1, 0], [0, 1], [0, 1]], [[0, 1, 2]])
    # clockwise input is reoriented
    m = TriMesh([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]])
    assert m.areas()[0] > 0


def test_fem_unit_triangle():
    fem = assemble_fem(UNIT_TRI)
    np.testing.assert_allclose(fem.G.toarray(), G_UNIT, atol=1e-15)
    np.testing.assert_allclose(fem.C, [1 / 6] * 3, atol=1e-15)


@pytest.mark.parametrize("diag", ["right", "alternate"])
def test_fem_invariants(diag):
    m = structured_mesh((0, 0, 3, 2), 9, 7, diagonal=diag)
    fem = assemble_fem(m)
    G = fem.G.toarray()
    np.testing.assert_allclose(G, G.T, atol=1e-15)
    np.testing.assert_allclose(G @ np.ones(m.n_vertices), 0.0, atol=1e-10)
    assert np.all(fem.C > 0)
    assert fem.C.sum() == pytest.approx(6.0, abs=1e-9)


def test_fem_permutation_invariance():
    m = structured_mesh((0, 0, 1, 1), 6, 5)
    perm = np.random.default_rng(1).permutation(m.n_vertices)
    inv = np.argsort(perm)
    m2 = TriMesh(m.vertices[perm], inv[m.triangles])
    f1, f2 = assemble_fem(m), assemble_fem(m2)
    np.testing.assert_allclose(f2.G.toarray(), f1.G.toarray()[np.ix_(perm, perm)], atol=1e-14)
    np.testing.assert_allclose(f2.C, f1.C[perm], atol=1e-15)


def test_spde_params_consistency():
    p = SpdeParams.from_range_sigma(0.7, 1.3)
    assert p.kappa == pytest.approx(math.sqrt(8.0) / 0.7, rel=1e-12)
    tau2 = gamma(1.0) / (gamma(2.0) * 4 * math.pi * p.kappa**2 * 1.3**2)
    assert p.tau**2 == pytest.approx(tau2, rel=1e-12)
    q = SpdeParams.from_kappa_tau(p.kappa, p.tau)
    assert q.range == pytest.approx(0.7, rel=1e-12)
    assert q.sigma == pytest.approx(1.3, rel=1e-12)


def test_spde_precision_unit_triangle():
    C = np.diag([1 / 6] * 3)
    Q_hand = C + 2 * G_UNIT + G_UNIT @ np.linalg.inv(C) @ G_UNIT
    Q = spde_precision(assemble_fem(UNIT_TRI), SpdeParams.from_kappa_tau(1.0, 1.0))
    np.testing.assert_allclose(Q.toarray(), Q_hand, atol=1e-13)


def test_spde_precision_mass_limit():
    fem = assemble_fem(UNIT_TRI)
    p = SpdeParams.from_kappa_tau(1e3, 1.0)
    Q = spde_precision(fem, p).toarray()
    ref = p.tau**2 * p.kappa**4 * np.diag(fem.C)
    assert np.abs(Q - ref).max() / np.abs(ref).max() < 1e-4


@pytest.mark.parametrize("kappa", [0.5, 1.0, 5.0])
def test_spde_precision_spd(kappa):
    fem = assemble_fem(structured_mesh((0, 0, 1, 1), 5, 5))
    Q = spde_precision(fem, SpdeParams.from_kappa_tau(kappa, 1.0)).toarray()
    np.testing.assert_allclose(Q, Q.T, atol=1e-12)
    np.linalg.cholesky(Q)


def test_spde_correlation_matches_matern():
    rho = 3.0
    mesh = structured_mesh((0, 0, 10, 10), 40, 40)
    p = SpdeParams.from_range_sigma(rho, 1.0)
    S = np.linalg.inv(spde_precision(assemble_fem(mesh), p).toarray())
    v = mesh.vertices
    inner = np.flatnonzero(np.all((v >= rho) & (v <= 10 - rho), axis=1))
    sd = np.sqrt(np.diag(S))
    err = []
    for i in inner[::3]:
        h = np.linalg.norm(v - v[i], axis=1)
        far = np.all((v >= rho) & (v <= 10 - rho), axis=1)
        sel = far & (h >= 0.2 * rho) & (h <= 1.5 * rho)
        emp = S[i, sel] / (sd[i] * sd[sel])
        err.append(np.abs(emp - matern_correlation(h[sel], p)).max())
    assert max(err) < 0.05


def test_projection_examples():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts = np.array([[1.0, 0.0], tri.mean(axis=0), [0.5, 0.0], [2.0, 2.0]])
    P = projection(UNIT_TRI, pts)
    A = P.A.toarray()
    np.testing.assert_allclose(A[0], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(A[1], [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(A[2], [0.5, 0.5, 0], atol=1e-15)
    np.testing.assert_array_equal(A[3], 0.0)
    np.testing.assert_array_equal(P.outside, [3])


def test_projection_rows_and_linearity():
    m = structured_mesh((0, 0, 2, 1), 11, 6)
    pts = np.random.default_rng(4).uniform([0, 0], [2, 1], (500, 2))
    P = projection(m, pts)
    assert P.inside.all()
    np.testing.assert_allclose(np.asarray(P.A.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert np.diff(P.A.indptr).max() <= 3
    # P1 interpolation reproduces linear functions exactly
    f = lambda x: 2.0 * x[:, 0] - 3.0 * x[:, 1] + 0.5
    np.testing.assert_allclose(P.A @ f(m.vertices), f(pts), atol=1e-12)


def test_matern_examples():
    p = SpdeParams.from_range_sigma(2.0, 1.0)
    assert matern_correlation(0.0, p) == 1.0
    r = matern_correlation(2.0, p)
    x = math.sqrt(8.0)
    assert r == pytest.approx(x * kv(1, x), rel=1e-12)
    assert 0.08 <= r <= 0.20
    h = np.linspace(0, 10, 200)
    assert np.all(np.diff(matern_correlation(h, p)) < 0)


def test_sample_gmrf_covariance():
    # correlations >= 0.5 keep every entry's Monte Carlo error near 2%
    S = np.array([[1.0, 0.6, 0.5], [0.6, 2.0, 0.9], [0.5, 0.9, 1.5]])
    Q = np.linalg.inv(S)
    x = sample_gmrf(Q, seed=11, n_samples=10_000)
    emp = np.cov(x)
    assert np.all(np.abs(emp - S) / np.abs(S) < 0.05)


def test_sample_gmrf_determinism_and_identity():
    Q = np.eye(200)
    a = sample_gmrf(Q, seed=5)
    np.testing.assert_array_equal(a, sample_gmrf(Q, seed=5))
    x = sample_gmrf(np.eye(50), seed=2, n_samples=2000)
    assert x.std() == pytest.approx(1.0, rel=0.02)


def test_sample_gmrf_constraint():
    from lucoda.precision import rw1_precision

    Q = rw1_precision(30, 1.0)
    x = sample_gmrf(Q, seed=3, constraint=np.ones((1, 30)))
    assert abs(x.sum()) < 1e-10


def test_cholesky_paths_agree():
    m = structured_mesh((0, 0, 1, 1), 25, 25)
    Q = spde_precision(assemble_fem(m), SpdeParams.from_range_sigma(0.3, 1.0)).Q
    d, s = CholeskyFactor(Q, dense=True), CholeskyFactor(Q, dense=False)
    assert d.logdet == pytest.approx(s.logdet, rel=1e-10)
    b = np.arange(Q.shape[0], dtype=float)
    np.testing.assert_allclose(d.solve(b), s.solve(b), rtol=1e-8)
    np.testing.assert_allclose(d.diag_inverse(), s.diag_inverse(), rtol=1e-8)
