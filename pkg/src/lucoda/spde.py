"""SPDE representation of Matern fields on triangulated meshes.

Linear finite elements with a lumped mass matrix give the sparse precision
``Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G)`` for smoothness
``alpha = 2`` in two dimensions.
"""
from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
from scipy.special import gamma, kv

from .errors import DegenerateBox, DegenerateTriangle, MeshError, ParameterOutOfRange
from .kernels import fem_local, locate_points
from .precision import SparsePrecision
from .sparse import CholeskyFactor

ALPHA = 2
DIM = 2
NU = ALPHA - DIM / 2.0


@dataclass(frozen=True)
class TriMesh:
    """Triangulation with counter-clockwise triangles."""

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        p = v[t]
        signed = 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )
        if np.any(np.abs(signed) < 1e-14):
            bad = np.nonzero(np.abs(signed) < 1e-14)[0]
            raise DegenerateTriangle(f"triangles with (near) zero area: {bad.tolist()[:10]}")
        flip = signed < 0
        if flip.any():
            t[flip] = t[flip][:, [0, 2, 1]]
        key = np.round(v / 1e-9).astype(np.int64)
        if np.unique(key, axis=0).shape[0] != len(v):
            raise MeshError("duplicate vertices within 1e-9")
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        bnd = np.zeros(len(v), dtype=bool)
        bnd[uniq[counts == 1].ravel()] = True
        for a in (v, t, bnd):
            a.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary", bnd)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def areas(self):
        p = self.vertices[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    def bbox(self):
        return (*self.vertices.min(axis=0), *self.vertices.max(axis=0))


@dataclass(frozen=True)
class FemMatrices:
    C: np.ndarray  # lumped mass diagonal
    G: sp.csr_matrix

    @property
    def n(self):
        return self.C.size

    @property
    def C_matrix(self):
        return sp.diags(self.C, format="csr")


@dataclass(frozen=True)
class SpdeParams:
    """Matern/SPDE parameters for ``alpha = 2`` in 2-D (``nu = 1``).

    Construct with :meth:`from_range_sigma` or :meth:`from_kappa_tau`; both
    keep ``kappa = sqrt(8 nu) / range`` and
    ``tau^2 = Gamma(nu) / (Gamma(alpha) (4 pi)^{d/2} kappa^2 sigma^2)``.
    """

    kappa: float
    tau: float
    sigma: float
    range: float
    alpha: int = ALPHA
    nu: float = NU

    @classmethod
    def from_range_sigma(cls, range_, sigma):
        if not (range_ > 0 and sigma > 0):
            raise ParameterOutOfRange("range and sigma must be positive")
        kappa = math.sqrt(8.0 * NU) / range_
        tau = math.sqrt(gamma(NU) / (gamma(ALPHA) * (4.0 * math.pi) ** (DIM / 2) * kappa**2 * sigma**2))
        return cls(kappa, tau, float(sigma), float(range_))

    @classmethod
    def from_kappa_tau(cls, kappa, tau):
        if not (kappa > 0 and tau > 0):
            raise ParameterOutOfRange("kappa and tau must be positive")
        range_ = math.sqrt(8.0 * NU) / kappa
        sigma = math.sqrt(gamma(NU) / (gamma(ALPHA) * (4.0 * math.pi) ** (DIM / 2) * kappa**2 * tau**2))
        return cls(float(kappa), float(tau), sigma, range_)


def structured_mesh(bbox, nx, ny, diagonal="right"):
    """Regular ``nx x ny`` vertex grid over ``bbox = (x0, y0, x1, y1)``.

    Each cell is split into two triangles. ``"right"`` cuts every cell from
    lower-left to upper-right; ``"alternate"`` flips the cut in a
    checkerboard pattern.
    """
    x0, y0, x1, y1 = map(float, bbox)
    if not (x1 > x0 and y1 > y0):
        raise DegenerateBox(f"bounding box {bbox} has no area")
    if nx < 2 or ny < 2:
        raise MeshError("need at least 2 vertices per direction")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    i, j = i.ravel(), j.ravel()
    a = j * nx + i
    b = a + 1
    c = a + nx + 1
    d = a + nx
    if diagonal == "alternate":
        flip = (i + j) % 2 == 1
    elif diagonal == "right":
        flip = np.zeros(a.size, dtype=bool)
    else:
        raise ValueError(f"unknown diagonal pattern {diagonal!r}")
    t1 = np.where(flip[:, None], np.column_stack([a, b, d]), np.column_stack([a, b, c]))
    t2 = np.where(flip[:, None], np.column_stack([b, c, d]), np.column_stack([a, c, d]))
    tris = np.empty((2 * a.size, 3), dtype=np.int64)
    tris[0::2] = t1
    tris[1::2] = t2
    return TriMesh(verts, tris)


def assemble_fem(mesh):
    """Lumped mass ``C`` and P1 stiffness ``G``."""
    rows, cols, vals, areas = fem_local(mesh.vertices, mesh.triangles)
    if np.any(np.abs(areas) < 1e-14):
        raise DegenerateTriangle("triangle with area below 1e-14")
    m = mesh.n_vertices
    G = sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    G = 0.5 * (G + G.T)
    C = np.zeros(m)
    np.add.at(C, mesh.triangles.ravel(), np.repeat(np.abs(areas) / 3.0, 3))
    return FemMatrices(C, sp.csr_matrix(G))


def spde_precision(fem, p):
    """``Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G)``."""
    k2 = p.kappa**2
    Cm = fem.C_matrix
    GCG = fem.G @ sp.diags(1.0 / fem.C) @ fem.G
    Q = p.tau**2 * (k2 * k2 * Cm + 2.0 * k2 * fem.G + GCG)
    Q = sp.csr_matrix(0.5 * (Q + Q.T))
    return SparsePrecision(Q, {"kappa": p.kappa, "tau": p.tau}, 0, "spde")


@dataclass(frozen=True)
class ProjectionMatrix:
    A: sp.csr_matrix
    inside: np.ndarray

    @property
    def shape(self):
        return self.A.shape

    @property
    def outside(self):
        return np.nonzero(~self.inside)[0]


def projection(mesh, points):
    """Barycentric interpolation matrix from mesh nodes to ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    tri, w = locate_points(pts, mesh.vertices, mesh.triangles)
    inside = tri >= 0
    idx = np.nonzero(inside)[0]
    rows = np.repeat(idx, 3)
    cols = mesh.triangles[tri[idx]].ravel()
    vals = w[idx].ravel()
    A = sp.coo_matrix((vals, (rows, cols)), shape=(len(pts), mesh.n_vertices)).tocsr()
    A.eliminate_zeros()
    return ProjectionMatrix(A, inside)


def matern_correlation(h, p):
    """Matern correlation for ``nu = 1`` with ``kappa = sqrt(8) / range``.

    ``corr(h) = (kappa h)^nu K_nu(kappa h) / (2^{nu-1} Gamma(nu))``; the value
    at ``h = range`` is about 0.14.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("distances must be nonnegative")
    x = p.kappa * h
    with np.errstate(invalid="ignore"):
        out = x**p.nu * kv(p.nu, x) / (2.0 ** (p.nu - 1) * gamma(p.nu))
    out = np.where(x == 0, 1.0, out)
    return out if out.ndim else float(out)


def sample_gmrf(Q, seed=None, n_samples=None, constraint=None, rng=None):
    """Draw from ``N(0, Q^{-1})`` via ``x = L^{-T} z``.

    For an intrinsic ``Q`` pass ``constraint`` (rows spanning the null space);
    the draw then uses ``Q + A^T A`` conditioned on ``A x = 0``.
    """
    Qm = Q.Q if isinstance(Q, SparsePrecision) else Q
    Qm = sp.csc_matrix(Qm)
    if constraint is not None:
        A = np.atleast_2d(np.asarray(constraint, dtype=float))
        Qm = sp.csc_matrix(Qm + sp.csc_matrix(A.T @ A))
    rng = rng if rng is not None else np.random.default_rng(seed)
    F = CholeskyFactor(Qm)
    n = Qm.shape[0]
    shape = (n,) if n_samples is None else (n, n_samples)
    x = F.solve_lt(rng.standard_normal(shape))
    if constraint is not None:
        V = F.solve(A.T)
        x = x - V @ np.linalg.solve(A @ V, A @ x)
    return x
