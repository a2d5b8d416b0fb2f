"""Cholesky factorisation of symmetric positive definite precision matrices.

Small systems use dense LAPACK; larger ones use SuperLU in symmetric mode
with diagonal pivoting disabled, from which a sparse Cholesky factor is
recovered (``U = D L^T`` for an SPD input).
"""
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import FactorizationFailure
from .kernels import selected_inverse_diag

DENSE_THRESHOLD = 400


class CholeskyFactor:
    """Factor ``Q = L L^T`` (up to a fill-reducing permutation).

    Parameters
    ----------
    Q : array_like or sparse matrix
        Symmetric positive definite matrix.
    dense : bool, optional
        Force the dense (``True``) or sparse (``False``) path; by default the
        dense path is used below :data:`DENSE_THRESHOLD` rows.
    """

    def __init__(self, Q, dense=None):
        n = Q.shape[0]
        self.n = n
        if dense is None:
            dense = n <= DENSE_THRESHOLD
        self.dense = bool(dense)
        if self.dense:
            A = Q.toarray() if sp.issparse(Q) else np.asarray(Q, dtype=float)
            try:
                self._L = np.linalg.cholesky(A)
            except np.linalg.LinAlgError as exc:
                raise FactorizationFailure("matrix is not positive definite") from exc
            self.logdet = 2.0 * float(np.sum(np.log(np.diag(self._L))))
        else:
            A = sp.csc_matrix(Q)
            try:
                lu = spla.splu(
                    A,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True),
                )
            except RuntimeError as exc:
                raise FactorizationFailure(str(exc)) from exc
            if not np.array_equal(lu.perm_r, lu.perm_c):
                raise FactorizationFailure("SuperLU applied an unsymmetric pivot")
            d = lu.U.diagonal()
            if np.any(d <= 0) or not np.all(np.isfinite(d)):
                raise FactorizationFailure("matrix is not positive definite")
            self._lu = lu
            self._d = d
            self._q = np.argsort(lu.perm_c)
            self.logdet = float(np.sum(np.log(d)))

    # -- linear algebra -----------------------------------------------------
    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.dense:
            return sla.cho_solve((self._L, True), b)
        return self._lu.solve(b)

    def factor(self):
        """Lower factor ``L`` and permutation ``q`` with ``Q[q][:, q] = L L^T``."""
        if self.dense:
            return self._L, np.arange(self.n)
        L = self._lu.L @ sp.diags(np.sqrt(self._d))
        return sp.csc_matrix(L), self._q

    def solve_lt(self, z):
        """Return ``x`` with ``Cov(x) = Q^{-1}`` when ``z`` is standard normal."""
        z = np.asarray(z, dtype=float)
        if self.dense:
            return sla.solve_triangular(self._L.T, z, lower=False)
        # L^T = D^{-1/2} U
        scale = np.sqrt(self._d)
        rhs = z * (scale[:, None] if z.ndim == 2 else scale)
        y = spla.spsolve_triangular(sp.csr_matrix(self._lu.U), rhs, lower=False)
        x = np.empty_like(y)
        x[self._q] = y
        return x

    def diag_inverse(self):
        """Diagonal of ``Q^{-1}``."""
        if self.dense:
            Linv = sla.solve_triangular(self._L, np.eye(self.n), lower=True)
            return np.einsum("ij,ij->j", Linv, Linv)
        L, q = self.factor()
        d = selected_inverse_diag(L)
        out = np.empty(self.n)
        out[q] = d
        return out


def logdet_spd(Q, dense=None):
    """Log-determinant of an SPD matrix."""
    return CholeskyFactor(Q, dense=dense).logdet


def is_spd(Q):
    try:
        CholeskyFactor(Q)
    except FactorizationFailure:
        return False
    return True
