"""Observation models and the Hurdle routing of compositions with zeros.

Besides the scalar kernels, each family exposes the per-observation
log-density together with its first derivative and curvature with respect
to the linear predictor, which is what the Newton solver consumes.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import digamma, expit, gammaln, log_expit, polygamma

from .coda import CompositionMatrix, DirichletParams, LogratioMatrix
from .errors import BoundaryValue, DimensionMismatch, PredictorOverflow, UnexpectedZero

LOG_TAU_STAR = 12.0
ETA_LIMIT = 30.0
_LOG_2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# scalar kernels
# ---------------------------------------------------------------------------

def beta_loglik(y, mu, phi):
    """Log density of Beta(mu * phi, (1 - mu) * phi) at ``y`` in (0, 1)."""
    y = np.asarray(y, dtype=float)
    if np.any((y <= 0) | (y >= 1)):
        raise BoundaryValue("Beta data must lie in the open interval (0, 1)")
    mu = np.asarray(mu, dtype=float)
    a, b = mu * phi, (1.0 - mu) * phi
    out = gammaln(phi) - gammaln(a) - gammaln(b) + (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y)
    return out if out.ndim else float(out)


def bernoulli_loglik(z, eta):
    """``z log s(eta) + (1 - z) log(1 - s(eta))`` with ``s`` the logistic."""
    z = np.asarray(z, dtype=float)
    eta = np.asarray(eta, dtype=float)
    out = z * log_expit(eta) + (1.0 - z) * log_expit(-eta)
    return out if out.ndim else float(out)


def dirichlet_predictor_map(etas):
    """Shapes ``alpha = exp(eta)`` (log link); the mean is ``alpha / sum``."""
    eta = np.asarray(etas, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise PredictorOverflow("non-finite linear predictor")
    if np.any(np.abs(eta) > ETA_LIMIT):
        raise PredictorOverflow(f"|eta| exceeds {ETA_LIMIT}")
    return DirichletParams(np.exp(eta))


def dirichlet_mean_from_predictor(etas):
    a = dirichlet_predictor_map(etas).alpha
    return a / a.sum()


# ---------------------------------------------------------------------------
# Gaussian stack of CLR pseudo-observations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianStack:
    """Univariate Gaussian pseudo-observations with fixed precision.

    ``row`` and ``part`` give the composition row and part of each entry;
    ``replicate`` indexes the correlation effect slot ``row * D + part``.
    """

    y: np.ndarray
    row: np.ndarray
    part: np.ndarray
    log_tau: float
    n_parts: int

    @property
    def n(self):
        return self.y.size

    @property
    def replicate(self):
        return self.row * self.n_parts + self.part


def clr_gaussian_stack(Ystar, n_predictors, log_tau_star=LOG_TAU_STAR):
    """Stack an ``n x D`` CLR table into ``n D`` Gaussian observations."""
    if not isinstance(Ystar, LogratioMatrix) or Ystar.kind != "clr":
        raise DimensionMismatch("a CLR LogratioMatrix is required")
    n, D = Ystar.values.shape
    if n_predictors != D:
        raise DimensionMismatch(f"{n_predictors} predictors for {D} parts")
    row, part = np.divmod(np.arange(n * D), D)
    return GaussianStack(Ystar.values.ravel().copy(), row, part, float(log_tau_star), D)


# ---------------------------------------------------------------------------
# Hurdle routing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HurdleModelSpec:
    """Which parts may be zero, and how the value model is built.

    ``share_scale`` names the hyperparameter scaling the value predictor
    inside each incidence predictor (``None`` disables sharing).
    """

    zero_capable: tuple
    value_model: str = "clr"
    share_scale: str = "alpha"
    share: str = "full"


@dataclass(frozen=True)
class IncidenceData:
    row: np.ndarray
    part: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class ValueData:
    """Long-format CLR values on the re-closed nonzero parts of each row."""

    row: np.ndarray
    part: np.ndarray
    clr: np.ndarray
    n_kept: np.ndarray  # per composition row


def hurdle_route(Y, spec):
    """Split compositions into Bernoulli incidence data and re-closed CLRs."""
    Y = Y if isinstance(Y, CompositionMatrix) else CompositionMatrix(Y)
    V = Y.values
    n, D = V.shape
    zc = np.zeros(D, dtype=bool)
    zc[list(spec.zero_capable)] = True
    nz = V > 0
    bad = (~nz) & (~zc)[None, :]
    if bad.any():
        r, c = np.nonzero(bad)
        raise UnexpectedZero(f"part {c[0]} of row {r[0]} is zero but not zero-capable")
    parts = np.nonzero(zc)[0]
    inc = IncidenceData(
        np.repeat(np.arange(n), parts.size),
        np.tile(parts, n),
        nz[:, parts].astype(np.int8).ravel(),
    )
    n_kept = nz.sum(axis=1)
    rows, cols, vals = [], [], []
    for i in np.nonzero(n_kept >= 2)[0]:
        keep = np.nonzero(nz[i])[0]
        lp = np.log(V[i, keep])
        rows.append(np.full(keep.size, i))
        cols.append(keep)
        vals.append(lp - lp.mean())
    if rows:
        val = ValueData(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), n_kept)
    else:
        e = np.zeros(0)
        val = ValueData(e.astype(int), e.astype(int), e, n_kept)
    return inc, val


# ---------------------------------------------------------------------------
# families used by the latent Gaussian engine
# ---------------------------------------------------------------------------

class Family:
    """Base class.

    ``evaluate(y, eta, h)`` returns per-observation log-densities, the
    gradient with respect to ``eta`` and a nonnegative curvature (diagonal
    array, or sparse matrix for grouped families).
    """

    hypers: tuple = ()
    group: int = 1

    def loglik(self, y, eta, h):
        raise NotImplementedError

    def evaluate(self, y, eta, h):
        raise NotImplementedError

    def mean(self, eta, h):
        raise NotImplementedError

    def sample(self, eta, h, rng):
        raise NotImplementedError


@dataclass
class Gaussian(Family):
    """Gaussian with identity link; precision fixed or a hyperparameter."""

    log_tau: float = None
    prec_hyper: str = None

    def __post_init__(self):
        self.hypers = (self.prec_hyper,) if self.prec_hyper else ()

    def _tau(self, h):
        return h[self.prec_hyper] if self.prec_hyper else np.exp(self.log_tau)

    def loglik(self, y, eta, h):
        tau = self._tau(h)
        r = y - eta
        return 0.5 * np.log(tau) - 0.5 * _LOG_2PI - 0.5 * tau * r * r

    def evaluate(self, y, eta, h):
        tau = self._tau(h)
        r = y - eta
        ll = 0.5 * np.log(tau) - 0.5 * _LOG_2PI - 0.5 * tau * r * r
        return ll, tau * r, np.full(r.shape, tau)

    def mean(self, eta, h):
        return eta

    def sample(self, eta, h, rng):
        return eta + rng.standard_normal(np.shape(eta)) / np.sqrt(self._tau(h))


@dataclass
class Bernoulli(Family):
    def loglik(self, y, eta, h):
        return y * log_expit(eta) + (1.0 - y) * log_expit(-eta)

    def evaluate(self, y, eta, h):
        p = expit(eta)
        return self.loglik(y, eta, h), y - p, p * (1.0 - p)

    def mean(self, eta, h):
        return expit(eta)

    def sample(self, eta, h, rng):
        return (rng.random(np.shape(eta)) < expit(eta)).astype(float)


@dataclass
class Beta(Family):
    """Beta with logit mean link and precision hyperparameter ``phi``."""

    phi_hyper: str = "phi"

    def __post_init__(self):
        self.hypers = (self.phi_hyper,)

    def loglik(self, y, eta, h):
        phi = h[self.phi_hyper]
        mu = expit(eta)
        a, b = mu * phi, (1.0 - mu) * phi
        with np.errstate(divide="ignore", invalid="ignore"):
            out = gammaln(phi) - gammaln(a) - gammaln(b) + (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y)
        return np.where(np.abs(eta) > ETA_LIMIT, -np.inf, out)

    def evaluate(self, y, eta, h):
        phi = h[self.phi_hyper]
        ll = self.loglik(y, eta, h)
        mu = expit(np.clip(eta, -ETA_LIMIT, ETA_LIMIT))
        a, b = mu * phi, (1.0 - mu) * phi
        v = mu * (1.0 - mu)
        ystar = np.log(y) - np.log1p(-y)
        mustar = digamma(a) - digamma(b)
        g_mu = phi * (ystar - mustar)
        trig = polygamma(1, a) + polygamma(1, b)
        fisher = phi * phi * trig * v * v
        observed = fisher - g_mu * v * (1.0 - 2.0 * mu)
        # observed curvature where it is positive, expected information otherwise
        w = np.where(observed > 0, observed, fisher)
        return ll, g_mu * v, w

    def mean(self, eta, h):
        return expit(eta)

    def sample(self, eta, h, rng):
        phi = h[self.phi_hyper]
        mu = expit(eta)
        y = rng.beta(mu * phi, (1.0 - mu) * phi)
        # keep draws strictly inside (0, 1) at double precision
        return np.clip(y, 1e-12, 1.0 - 1e-12)


@dataclass
class Dirichlet(Family):
    """Dirichlet with log link on each shape; ``D`` predictors per row.

    Predictor rows are ordered row-major (observation, part). The curvature
    is the expected information, which is positive definite.
    """

    D: int = 3

    def __post_init__(self):
        self.group = self.D

    def _alpha(self, eta):
        return np.exp(np.clip(eta, -ETA_LIMIT, ETA_LIMIT)).reshape(-1, self.D)

    def loglik(self, y, eta, h):
        Y = np.asarray(y).reshape(-1, self.D)
        a = self._alpha(eta)
        out = gammaln(a.sum(axis=1)) - gammaln(a).sum(axis=1) + ((a - 1.0) * np.log(Y)).sum(axis=1)
        over = np.abs(np.asarray(eta).reshape(-1, self.D)).max(axis=1) > ETA_LIMIT
        return np.where(over, -np.inf, out)

    def evaluate(self, y, eta, h):
        Y = np.asarray(y).reshape(-1, self.D)
        a = self._alpha(eta)
        a0 = a.sum(axis=1, keepdims=True)
        ll = self.loglik(y, eta, h)
        g = a * (digamma(a0) - digamma(a) + np.log(Y))
        n, D = a.shape
        blocks = np.einsum("i,ij,ik->ijk", -polygamma(1, a0[:, 0]), a, a)
        idx = np.arange(D)
        blocks[:, idx, idx] += a * a * polygamma(1, a)
        r = np.repeat(np.arange(n * D).reshape(n, D), D, axis=1).ravel()
        c = np.tile(np.arange(n * D).reshape(n, D), (1, D)).ravel()
        W = sp.csr_matrix((blocks.ravel(), (r, c)), shape=(n * D, n * D))
        return ll, g.ravel(), W

    def mean(self, eta, h):
        a = self._alpha(eta)
        return (a / a.sum(axis=1, keepdims=True)).ravel()

    def sample(self, eta, h, rng):
        a = self._alpha(eta)
        y = np.array([rng.dirichlet(r) for r in a])
        y = np.clip(y, 1e-300, None)
        return (y / y.sum(axis=1, keepdims=True)).ravel()
