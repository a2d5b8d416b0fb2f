"""Gaussian approximation at the conditional posterior mode of the latent field."""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import FactorizationFailure, LineSearchFailure, NonConvergence
from ..sparse import CholeskyFactor

MAX_ITER = 100
GRAD_TOL = 1e-8


@dataclass
class LaplaceFit:
    """Result of :func:`fit_gaussian_approx` at one hyperparameter point.

    ``H`` is the posterior precision ``Q + A^T W A``; when the model has
    linear constraints the factor is of ``H + C^T C`` (identical on the
    constrained subspace) and every summary applies the kriging correction.
    """

    theta: np.ndarray
    h: dict
    mode: np.ndarray
    H: object
    factor: CholeskyFactor
    log_evidence: float
    log_posterior: float
    iterations: int
    grad_norm: float
    C: np.ndarray = None
    _V: np.ndarray = None
    _S: np.ndarray = None

    def _corr(self):
        if self.C is None:
            return None, None
        if self._V is None:
            self._V = self.factor.solve(self.C.T)
            self._S = self.C @ self._V
        return self._V, self._S

    def marginal_var(self):
        d = self.factor.diag_inverse()
        V, S = self._corr()
        if V is not None:
            d = d - np.einsum("ij,ij->i", V, np.linalg.solve(S, V.T).T)
        return np.maximum(d, 0.0)

    def marginal_sd(self):
        return np.sqrt(self.marginal_var())

    def covariance(self):
        """Dense posterior covariance (small systems only)."""
        Sig = self.factor.solve(np.eye(self.mode.size))
        V, S = self._corr()
        if V is not None:
            Sig = Sig - V @ np.linalg.solve(S, V.T)
        return 0.5 * (Sig + Sig.T)

    def covariance_block(self, idx):
        """Posterior covariance among the latent elements ``idx``."""
        idx = np.atleast_1d(np.arange(self.mode.size)[idx])
        E = np.zeros((self.mode.size, idx.size))
        E[idx, np.arange(idx.size)] = 1.0
        Sig = self.factor.solve(E)[idx]
        V, S = self._corr()
        if V is not None:
            Sig = Sig - V[idx] @ np.linalg.solve(S, V[idx].T)
        return 0.5 * (Sig + Sig.T)

    def sample(self, rng, n):
        """``n`` draws (columns) from the Gaussian approximation."""
        z = rng.standard_normal((self.mode.size, n))
        x = self.factor.solve_lt(z)
        V, S = self._corr()
        if V is not None:
            x = x - V @ np.linalg.solve(S, self.C @ x)
        return self.mode[:, None] + x


def _objective(model, Q, A, z, h):
    r = z - model.m0
    eta = A @ z + model.offset
    ll = model.loglik_total(eta, h)
    return -0.5 * float(r @ (Q @ r)) + ll


def _curvature(A, W):
    if sp.issparse(W):
        return sp.csr_matrix(A.T @ W @ A)
    return sp.csr_matrix(A.T @ sp.diags(W) @ A)


def fit_gaussian_approx(model, theta, z0=None, max_iter=MAX_ITER, gtol=GRAD_TOL):
    """Newton iterations for the latent mode at hyperparameters ``theta``.

    Parameters
    ----------
    model : LatentModel
    theta : array_like
        Hyperparameters on the internal scale (one per ``model.hypers``).
    z0 : ndarray, optional
        Warm start.

    Returns
    -------
    LaplaceFit
    """
    theta = np.asarray(theta, dtype=float)
    h = model.natural(theta)
    Q, ldQ = model.prior_precision(h)
    A = model.A(h)
    C = model.C
    CtC = sp.csr_matrix(C.T @ C) if C is not None else None
    z = model.m0.copy() if z0 is None else np.array(z0, dtype=float)
    if C is not None:
        z = z - C.T @ (C @ z)
    f = _objective(model, Q, A, z, h)
    if not np.isfinite(f):
        z = model.m0.copy() if C is None else model.m0 - C.T @ (C @ model.m0)
        f = _objective(model, Q, A, z, h)
    it = 0
    while True:
        eta = A @ z + model.offset
        _, g_eta, W = model.evaluate(eta, h)
        grad = -(Q @ (z - model.m0)) + A.T @ g_eta
        if C is not None:
            grad = grad - C.T @ (C @ grad)
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        H = sp.csr_matrix(Q + _curvature(A, W))
        Ht = H + CtC if C is not None else H
        try:
            F = CholeskyFactor(Ht)
        except FactorizationFailure:
            # fall back to expected curvature plus a small ridge
            F = CholeskyFactor(Ht + 1e-8 * sp.identity(Ht.shape[0]))
        if gnorm < gtol:
            break
        if it >= max_iter:
            raise NonConvergence(f"no convergence after {max_iter} Newton iterations (|grad| = {gnorm:.3g})")
        step = F.solve(grad)
        if C is not None:
            V = F.solve(C.T)
            step = step - V @ np.linalg.solve(C @ V, C @ (z + step))
        dec = float(step @ (Ht @ step))
        t = 1.0
        for _ in range(40):
            zn = z + t * step
            fn = _objective(model, Q, A, zn, h)
            if np.isfinite(fn) and fn >= f - 1e-12 * max(1.0, abs(f)):
                break
            t *= 0.5
        else:
            raise LineSearchFailure("backtracking failed to find an ascent step")
        z, f = zn, fn
        it += 1
        if dec * t * t < 1e-24 * max(1.0, abs(f)):
            eta = A @ z + model.offset
            _, g_eta, W = model.evaluate(eta, h)
            grad = -(Q @ (z - model.m0)) + A.T @ g_eta
            if C is not None:
                grad = grad - C.T @ (C @ grad)
            gnorm = float(np.max(np.abs(grad)))
            H = sp.csr_matrix(Q + _curvature(A, W))
            Ht = H + CtC if C is not None else H
            F = CholeskyFactor(Ht)
            break
    log_ev = f + 0.5 * ldQ - 0.5 * F.logdet
    fit = LaplaceFit(theta, h, z, H, F, 0.0, 0.0, it, gnorm, C)
    if C is not None:
        _, S = fit._corr()
        log_ev -= 0.5 * float(np.linalg.slogdet(S)[1])
    fit.log_evidence = float(log_ev)
    fit.log_posterior = float(log_ev + model.log_hyper_prior(theta))
    return fit
