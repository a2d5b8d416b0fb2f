"""Latent model components.

Each term owns a slice of the latent vector and returns its prior
precision and (pseudo) log-determinant for given natural hyperparameter
values. Hyperparameter slots are either names, looked up in the value
dictionary, or plain numbers held fixed. Two terms naming the same
hyperparameter share it (replication with identical hyperparameters).
"""
import numpy as np
import scipy.sparse as sp

from ..errors import NotPositiveDefinite
from ..precision import (
    AdjacencyGraph,
    besag_structure,
    correlation_effect_precision,
    row_normalize,
    rw1_structure,
)

_EIG_LIMIT = 2500


def _val(h, slot):
    return h[slot] if isinstance(slot, str) else float(slot)


def _names(*slots):
    return tuple(s for s in slots if isinstance(s, str))


def _orthonormal_rows(M, tol=1e-10):
    """Orthonormal basis (rows) of the row space of ``M``."""
    if M is None or len(M) == 0:
        return None
    u, s, vt = np.linalg.svd(np.atleast_2d(M), full_matrices=False)
    k = int(np.sum(s > tol * max(1.0, s.max())))
    return vt[:k]


class Term:
    """Base latent term."""

    name = ""
    size = 0
    constraints = None
    rank_deficiency = 0

    @property
    def hypers(self):
        return ()

    def prior_mean(self):
        return np.zeros(self.size)

    def precision(self, h):
        """Return ``(Q, log_pdet)``."""
        raise NotImplementedError

    @property
    def rank(self):
        return self.size - self.rank_deficiency


class FixedEffects(Term):
    """Coefficients with a Gaussian prior.

    ``prec`` is a scalar or per-coefficient vector (independent priors,
    0.001 by default) or a full ``size x size`` precision matrix, as used
    when a previous posterior is carried forward as the prior.
    """

    def __init__(self, names, mean=0.0, prec=0.001, name="fixed"):
        self.name = name
        self.names = tuple(names)
        self.size = len(self.names)
        self.mean = np.broadcast_to(np.asarray(mean, dtype=float), (self.size,)).copy()
        prec = np.asarray(prec, dtype=float)
        if prec.ndim == 2:
            if prec.shape != (self.size, self.size):
                raise ValueError(f"precision matrix must be {self.size}x{self.size}")
            prec = 0.5 * (prec + prec.T)
            sign, ld = np.linalg.slogdet(prec)
            if sign <= 0:
                raise NotPositiveDefinite("fixed-effect prior precision is not positive definite")
            self.prec, self._ld = prec, float(ld)
        else:
            self.prec = np.broadcast_to(prec, (self.size,)).copy()
            self._ld = float(np.sum(np.log(self.prec)))

    def prior_mean(self):
        return self.mean.copy()

    def precision_matrix(self):
        return self.prec if self.prec.ndim == 2 else np.diag(self.prec)

    def precision(self, h):
        Q = sp.csr_matrix(self.prec) if self.prec.ndim == 2 else sp.diags(self.prec, format="csr")
        return Q, self._ld

    def index(self, name):
        return self.names.index(name)


class IID(Term):
    def __init__(self, name, n, tau="tau"):
        self.name, self.size, self.tau = name, int(n), tau

    @property
    def hypers(self):
        return _names(self.tau)

    def precision(self, h):
        t = _val(h, self.tau)
        return t * sp.identity(self.size, format="csr"), self.size * np.log(t)


class _Eigen(Term):
    """Terms whose structure matrix eigenvalues are precomputed."""

    def _eig(self, R):
        if R.shape[0] <= _EIG_LIMIT:
            return np.linalg.eigvalsh(R.toarray() if sp.issparse(R) else R)
        return None


class Besag(_Eigen):
    """Intrinsic CAR with a sum-to-zero constraint."""

    def __init__(self, name, graph, tau="tau"):
        g = graph if isinstance(graph, AdjacencyGraph) else AdjacencyGraph(graph)
        self.name, self.size, self.tau = name, g.n_areas, tau
        self.R = besag_structure(g)
        e = self._eig(self.R)
        self._lpdet_R = 0.0 if e is None else float(np.sum(np.log(np.sort(e)[1:])))
        self.rank_deficiency = 1
        self.constraints = np.full((1, self.size), 1.0 / np.sqrt(self.size))

    @property
    def hypers(self):
        return _names(self.tau)

    def precision(self, h):
        t = _val(h, self.tau)
        return t * self.R, (self.size - 1) * np.log(t) + self._lpdet_R


class RW1(Besag):
    def __init__(self, name, n, tau="tau"):
        self.name, self.size, self.tau = name, int(n), tau
        self.R = rw1_structure(self.size)
        # eigenvalues of the path Laplacian are 2 - 2 cos(pi k / n)
        k = np.arange(1, self.size)
        self._lpdet_R = float(np.sum(np.log(2.0 - 2.0 * np.cos(np.pi * k / self.size))))
        self.rank_deficiency = 1
        self.constraints = np.full((1, self.size), 1.0 / np.sqrt(self.size))


class Leroux(_Eigen):
    """``tau [(1 - lambda) I + lambda (D - W)]``.

    With ``constrained=True`` the field is conditioned on a zero sum. The
    constant vector is an eigenvector of ``D - W`` (eigenvalue 0 on a
    connected graph), so the conditional log-determinant simply omits it.
    """

    def __init__(self, name, graph, tau="tau", lam="lambda", constrained=False):
        g = graph if isinstance(graph, AdjacencyGraph) else AdjacencyGraph(graph)
        self.name, self.size, self.tau, self.lam = name, g.n_areas, tau, lam
        self.R = besag_structure(g)
        self.I = sp.identity(self.size, format="csr")
        self.e = self._eig(self.R)
        if constrained:
            if self.e is None:
                raise ValueError("constrained Leroux needs the dense eigenvalues (graph too large)")
            self.constraints = np.full((1, self.size), 1.0 / np.sqrt(self.size))
            self.e = np.sort(self.e)[1:]

    @property
    def hypers(self):
        return _names(self.tau, self.lam)

    def precision(self, h):
        t, l = _val(h, self.tau), _val(h, self.lam)
        Q = t * ((1.0 - l) * self.I + l * self.R)
        if self.e is None:
            from ..sparse import logdet_spd

            return sp.csr_matrix(Q), logdet_spd(Q)
        return sp.csr_matrix(Q), float(self.e.size * np.log(t) + np.sum(np.log((1.0 - l) + l * self.e)))


class AR1(Term):
    """Stationary AR(1) with marginal precision ``tau``."""

    def __init__(self, name, n, tau="tau", phi="phi"):
        self.name, self.size, self.tau, self.phi = name, int(n), tau, phi

    @property
    def hypers(self):
        return _names(self.tau, self.phi)

    def precision(self, h):
        from ..precision import ar1_precision

        t, p = _val(h, self.tau), _val(h, self.phi)
        Q = ar1_precision(self.size, t, p).Q
        return Q, self.size * np.log(t) - (self.size - 1) * np.log(1.0 - p * p)


class SPDE(Term):
    """Matern field on mesh nodes with log-range / log-sigma hyperparameters.

    Slots hold the natural range and marginal standard deviation.
    """

    def __init__(self, name, fem, range_="range", sigma="sigma"):
        self.name, self.size = name, fem.n
        self.fem = fem
        self.range_, self.sigma = range_, sigma
        c = np.sqrt(fem.C)
        M = (sp.diags(1.0 / c) @ fem.G @ sp.diags(1.0 / c)).toarray()
        self.g = np.clip(np.linalg.eigvalsh(0.5 * (M + M.T)), 0.0, None)
        self._ldC = float(np.sum(np.log(fem.C)))
        self._C = fem.C_matrix
        self._GCG = sp.csr_matrix(fem.G @ sp.diags(1.0 / fem.C) @ fem.G)

    @property
    def hypers(self):
        return _names(self.range_, self.sigma)

    def params(self, h):
        from ..spde import SpdeParams

        return SpdeParams.from_range_sigma(_val(h, self.range_), _val(h, self.sigma))

    def precision(self, h):
        p = self.params(h)
        k2, t2 = p.kappa**2, p.tau**2
        Q = t2 * (k2 * k2 * self._C + 2.0 * k2 * self.fem.G + self._GCG)
        ld = self.size * np.log(t2) + 2.0 * np.sum(np.log(k2 + self.g)) + self._ldC
        return sp.csr_matrix(Q), float(ld)


class Kron(Term):
    """Separable ``Q_space (x) Q_time`` with space-major ordering.

    An optional extra precision ``tau`` multiplies the product; leave it as
    ``None`` when the factors carry their own scale.
    """

    def __init__(self, name, space, time, tau=None):
        self.name = name
        self.space, self.time, self.tau = space, time, tau
        self.ns, self.nt = space.size, time.size
        self.size = self.ns * self.nt
        self.rank_deficiency = self.size - space.rank * time.rank
        rows = []
        if space.constraints is not None:
            rows.append(np.kron(space.constraints, np.eye(self.nt)))
        if time.constraints is not None:
            rows.append(np.kron(np.eye(self.ns), time.constraints))
        self.constraints = _orthonormal_rows(np.vstack(rows)) if rows else None

    @property
    def hypers(self):
        return tuple(dict.fromkeys(self.space.hypers + self.time.hypers + _names(self.tau or 1.0)))

    def precision(self, h):
        Qs, ls = self.space.precision(h)
        Qt, lt = self.time.precision(h)
        Q = sp.kron(Qs, Qt, format="csr")
        ld = self.time.rank * ls + self.space.rank * lt
        if self.tau is not None:
            t = _val(h, self.tau)
            Q = t * Q
            ld += self.rank * np.log(t)
        return Q, float(ld)


class SLMError(_Eigen):
    """Spatial error structure ``tau (I - rho W)^T (I - rho W)``."""

    def __init__(self, name, graph, tau="tau", rho="rho_l"):
        self.name, self.tau, self.rho = name, tau, rho
        self.W = row_normalize(graph)
        self.size = self.W.shape[0]
        self.I = sp.identity(self.size, format="csr")
        self.e = np.linalg.eigvals(self.W.toarray()) if self.size <= _EIG_LIMIT else None

    @property
    def hypers(self):
        return _names(self.tau, self.rho)

    def precision(self, h):
        t, r = _val(h, self.tau), _val(h, self.rho)
        B = self.I - r * self.W
        Q = sp.csr_matrix(t * (B.T @ B))
        if self.e is None:
            from ..sparse import logdet_spd

            return Q, logdet_spd(Q)
        return Q, float(self.size * np.log(t) + 2.0 * np.sum(np.log(np.abs(1.0 - r * self.e))))


class Correlated(Term):
    """``n`` replicates of a ``D``-dimensional correlated effect.

    Element ``i * D + d`` belongs to replicate ``i`` and part ``d``.
    """

    def __init__(self, name, n, taus, rhos):
        self.name = name
        self.n = int(n)
        self.taus = tuple(taus)
        self.D = len(self.taus)
        self.rhos = tuple(rhos)
        if len(self.rhos) != self.D * (self.D - 1) // 2:
            raise ValueError("need one correlation slot per pair of parts")
        self.size = self.n * self.D
        self._I = sp.identity(self.n, format="csr")

    @property
    def hypers(self):
        return _names(*self.taus, *self.rhos)

    def block(self, h):
        return correlation_effect_precision([_val(h, t) for t in self.taus], [_val(h, r) for r in self.rhos])

    def precision(self, h):
        QD = self.block(h)
        sign, ld = np.linalg.slogdet(QD)
        if sign <= 0:
            raise NotPositiveDefinite("correlation block is not positive definite")
        return sp.kron(self._I, sp.csr_matrix(QD), format="csr"), float(self.n * ld)


class Structured(Term):
    """``tau R`` for a user-supplied structure matrix ``R``."""

    def __init__(self, name, R, tau="tau", null_basis=None, log_pdet_R=None):
        self.name = name
        self.R = sp.csr_matrix(R)
        self.size = self.R.shape[0]
        self.tau = tau
        self.constraints = _orthonormal_rows(null_basis) if null_basis is not None else None
        self.rank_deficiency = 0 if self.constraints is None else self.constraints.shape[0]
        if log_pdet_R is None:
            e = np.linalg.eigvalsh(self.R.toarray())
            e = np.sort(e)[self.rank_deficiency :]
            log_pdet_R = float(np.sum(np.log(e)))
        self._lp = log_pdet_R

    @property
    def hypers(self):
        return _names(self.tau)

    def precision(self, h):
        t = _val(h, self.tau)
        return t * self.R, self.rank * np.log(t) + self._lp
