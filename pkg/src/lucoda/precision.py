"""Sparse precision matrices for areal, temporal, space-time and spatial
econometric Gaussian Markov random fields."""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import (
    DimensionMismatch,
    DisconnectedGraph,
    IsolatedArea,
    NonStationary,
    NotPositiveDefinite,
    ParameterOutOfRange,
    SingularSystem,
)


@dataclass(frozen=True)
class AdjacencyGraph:
    """Symmetric adjacency between ``n_areas`` areal units."""

    W: sp.csr_matrix

    def __post_init__(self):
        W = sp.csr_matrix(self.W, dtype=float)
        if W.shape[0] != W.shape[1]:
            raise DimensionMismatch("adjacency must be square")
        W.setdiag(0.0)
        W.eliminate_zeros()
        if abs(W - W.T).max() > 1e-12 if W.nnz else False:
            raise ValueError("adjacency must be symmetric")
        W.sort_indices()
        object.__setattr__(self, "W", W)

    @classmethod
    def from_pairs(cls, pairs, n_areas):
        pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        i = np.concatenate([pairs[:, 0], pairs[:, 1]])
        j = np.concatenate([pairs[:, 1], pairs[:, 0]])
        W = sp.coo_matrix((np.ones(i.size), (i, j)), shape=(n_areas, n_areas)).tocsr()
        W.data[:] = 1.0  # duplicate pairs collapse to a single edge
        return cls(W)

    @property
    def n_areas(self):
        return self.W.shape[0]

    @property
    def degrees(self):
        return np.asarray(self.W.sum(axis=1)).ravel()

    def neighbors(self, i):
        return self.W.indices[self.W.indptr[i] : self.W.indptr[i + 1]]

    @property
    def n_components(self):
        return connected_components(self.W, directed=False)[0]

    def pairs(self):
        U = sp.triu(self.W, k=1).tocoo()
        return np.column_stack([U.row, U.col])


@dataclass(frozen=True)
class SparsePrecision:
    """A GMRF precision matrix with its parameters and null-space size."""

    Q: sp.csr_matrix
    params: dict = field(default_factory=dict)
    rank_deficiency: int = 0
    kind: str = ""

    @property
    def dimension(self):
        return self.Q.shape[0]

    @property
    def rank(self):
        return self.dimension - self.rank_deficiency

    def toarray(self):
        return self.Q.toarray()


def _graph_W(g):
    return g.W if isinstance(g, AdjacencyGraph) else sp.csr_matrix(g, dtype=float)


def row_normalize(W):
    """Scale each row of an adjacency matrix to sum to one."""
    W = sp.csr_matrix(_graph_W(W), dtype=float)
    s = np.asarray(W.sum(axis=1)).ravel()
    if np.any(s == 0):
        raise IsolatedArea(f"areas without neighbours: {np.nonzero(s == 0)[0].tolist()}")
    return sp.diags(1.0 / s) @ W


def _check_positive(name, value):
    if not value > 0:
        raise ParameterOutOfRange(f"{name} must be positive, got {value}")


def besag_structure(g):
    W = _graph_W(g)
    d = np.asarray(W.sum(axis=1)).ravel()
    return sp.csr_matrix(sp.diags(d) - W)


def besag_precision(g, tau):
    """Intrinsic CAR precision ``tau (D - W)`` on a connected graph."""
    _check_positive("tau", tau)
    g = g if isinstance(g, AdjacencyGraph) else AdjacencyGraph(g)
    if np.any(g.degrees == 0):
        raise IsolatedArea("Besag model requires every area to have a neighbour")
    nc = g.n_components
    if nc != 1:
        raise DisconnectedGraph(f"graph has {nc} connected components (rank deficiency {nc})")
    return SparsePrecision(tau * besag_structure(g), {"tau": tau}, 1, "besag")


def leroux_precision(g, tau, lam):
    """Leroux precision ``tau [I + lam (D - I - W)]``."""
    _check_positive("tau", tau)
    if not 0.0 <= lam <= 1.0:
        raise ParameterOutOfRange(f"lambda must lie in [0, 1], got {lam}")
    g = g if isinstance(g, AdjacencyGraph) else AdjacencyGraph(g)
    n = g.n_areas
    R = besag_structure(g)
    Q = tau * ((1.0 - lam) * sp.identity(n, format="csr") + lam * R)
    rd = 0
    if lam == 1.0:
        rd = g.n_components
    return SparsePrecision(sp.csr_matrix(Q), {"tau": tau, "lambda": lam}, rd, "leroux")


def rw1_structure(n):
    e = np.ones(n)
    d = 2.0 * e
    d[0] = d[-1] = 1.0
    return sp.diags([-e[1:], d, -e[1:]], [-1, 0, 1], format="csr")


def rw1_precision(n_times, tau):
    """First-order random walk precision (intrinsic, rank deficiency 1)."""
    if n_times < 2:
        raise ParameterOutOfRange("RW1 needs at least two time points")
    _check_positive("tau", tau)
    return SparsePrecision(tau * rw1_structure(n_times), {"tau": tau}, 1, "rw1")


def ar1_precision(n_times, tau, phi):
    """Stationary AR(1) precision with marginal precision ``tau``."""
    _check_positive("tau", tau)
    if not abs(phi) < 1.0:
        raise NonStationary(f"|phi| must be < 1, got {phi}")
    if n_times < 1:
        raise ParameterOutOfRange("n_times must be positive")
    c = tau / (1.0 - phi * phi)
    d = np.full(n_times, c * (1.0 + phi * phi))
    d[0] = d[-1] = c
    if n_times == 1:
        d[0] = tau
    off = np.full(n_times - 1, -c * phi)
    Q = sp.diags([off, d, off], [-1, 0, 1], format="csr")
    return SparsePrecision(Q, {"tau": tau, "phi": phi}, 0, "ar1")


_KH_TYPES = {"I": 1, "II": 2, "III": 3, "IV": 4, 1: 1, 2: 2, 3: 3, 4: 4}


def kronecker_interaction(Qs, Qt, kind, tau_st=1.0):
    """Knorr-Held space-time interaction ``tau_st * (Qs (x) Qt)``.

    Types substitute identities for the unstructured factors: I uses
    ``I (x) I``, II ``I (x) Qt``, III ``Qs (x) I`` and IV ``Qs (x) Qt``.
    The ordering is space-major (index ``s * n_t + t``).
    """
    try:
        k = _KH_TYPES[kind.upper() if isinstance(kind, str) else kind]
    except KeyError:
        raise ParameterOutOfRange(f"unknown interaction type {kind!r}") from None
    _check_positive("tau_st", tau_st)
    if not isinstance(Qs, SparsePrecision) or not isinstance(Qt, SparsePrecision):
        raise DimensionMismatch("both factors must be SparsePrecision instances")
    ns, nt = Qs.dimension, Qt.dimension
    if Qs.Q.shape[0] != Qs.Q.shape[1] or Qt.Q.shape[0] != Qt.Q.shape[1]:
        raise DimensionMismatch("factors must be square")
    Is = sp.identity(ns, format="csr")
    It = sp.identity(nt, format="csr")
    A, ra = (Qs.Q, Qs.rank) if k in (3, 4) else (Is, ns)
    B, rb = (Qt.Q, Qt.rank) if k in (2, 4) else (It, nt)
    Q = tau_st * sp.kron(A, B, format="csr")
    params = {"tau_st": tau_st, "type": ["I", "II", "III", "IV"][k - 1]}
    return SparsePrecision(Q, params, ns * nt - ra * rb, "knorr-held")


def slm_error_precision(g, tau, rho_l):
    """Spatial error precision ``tau (I - rho W)^T (I - rho W)`` with
    row-normalised ``W``."""
    _check_positive("tau", tau)
    if not abs(rho_l) < 1.0:
        raise ParameterOutOfRange(f"|rho_l| must be < 1, got {rho_l}")
    Wn = row_normalize(g)
    n = Wn.shape[0]
    B = sp.identity(n, format="csr") - rho_l * Wn
    return SparsePrecision(sp.csr_matrix(tau * (B.T @ B)), {"tau": tau, "rho_l": rho_l}, 0, "slm-error")


def slm_design_transform(X, g, rho):
    """Solve ``(I + rho W) Z = X`` with row-normalised ``W``.

    The sign convention follows the operator as written; pass a negative
    ``rho`` for the ``(I - rho W)^{-1}`` reduced form.
    """
    if not abs(rho) < 1.0:
        raise ParameterOutOfRange(f"|rho| must be < 1, got {rho}")
    Wn = row_normalize(g)
    n = Wn.shape[0]
    X = np.asarray(X, dtype=float)
    if X.shape[0] != n:
        raise DimensionMismatch(f"design has {X.shape[0]} rows for {n} areas")
    M = sp.csc_matrix(sp.identity(n) + rho * Wn)
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    Z = lu.solve(X if X.ndim == 2 else X[:, None])
    return Z if X.ndim == 2 else Z[:, 0]


def _rho_matrix(D, rhos):
    R = np.zeros((D, D))
    if isinstance(rhos, dict):
        for (i, j), v in rhos.items():
            R[i, j] = R[j, i] = v
    else:
        rhos = np.asarray(rhos, dtype=float).ravel()
        iu = np.triu_indices(D, k=1)
        if rhos.size != iu[0].size:
            raise DimensionMismatch(f"expected {iu[0].size} correlation parameters, got {rhos.size}")
        R[iu] = rhos
        R = R + R.T
    return R


def correlation_effect_precision(taus, rhos):
    """``D x D`` precision with ``Q_ii = tau_i`` and
    ``Q_ij = rho_ij / sqrt(tau_i tau_j)``.

    ``rhos`` is either a dict keyed by index pairs or the upper triangle in
    row-major order ``(0,1), (0,2), ..., (D-2,D-1)``.
    """
    taus = np.asarray(taus, dtype=float).ravel()
    if np.any(taus <= 0):
        raise ParameterOutOfRange("marginal precisions must be positive")
    D = taus.size
    R = _rho_matrix(D, rhos)
    Q = R / np.sqrt(np.outer(taus, taus))
    np.fill_diagonal(Q, taus)
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("correlation parameters give a non positive definite precision") from None
    return Q
