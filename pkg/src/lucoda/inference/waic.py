"""Watanabe-Akaike information criterion from Gaussian-approximation draws."""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import InsufficientDraws

DEFAULT_DRAWS = 200
MIN_DRAWS = 50


@dataclass(frozen=True)
class WaicResult:
    waic: float
    lppd: float
    p_waic: float
    pointwise: np.ndarray  # per-observation contribution to WAIC


def pointwise_loglik_draws(summary, n_draws=DEFAULT_DRAWS, seed=0):
    """``(n_draws, n_obs)`` log-likelihood matrix.

    Grid points are chosen by their weights, then the latent field is drawn
    from that point's Gaussian approximation. A fixed ``seed`` gives common
    random numbers across competing models.
    """
    if n_draws < MIN_DRAWS:
        raise InsufficientDraws(f"{n_draws} draws requested; at least {MIN_DRAWS} are required")
    model = summary.model
    rng = np.random.default_rng(seed)
    which = rng.choice(len(summary.fits), size=n_draws, p=summary.weights)
    counts = np.bincount(which, minlength=len(summary.fits))
    out = []
    for fit, c in zip(summary.fits, counts):
        if c == 0:
            continue
        X = fit.sample(rng, int(c))
        A = model.A(fit.h)
        E = A @ X + model.offset[:, None]
        for s in range(int(c)):
            out.append(model.pointwise_loglik(E[:, s], fit.h))
    return np.array(out)


def waic_from_loglik(L):
    """WAIC from an ``(S, n)`` matrix of pointwise log-likelihoods."""
    S = L.shape[0]
    if S < MIN_DRAWS:
        raise InsufficientDraws(f"{S} draws; at least {MIN_DRAWS} are required")
    lppd_i = logsumexp(L, axis=0) - np.log(S)
    p_i = np.var(L, axis=0, ddof=1)
    return WaicResult(float(-2.0 * (lppd_i.sum() - p_i.sum())), float(lppd_i.sum()), float(p_i.sum()), -2.0 * (lppd_i - p_i))


def waic(summary, n_draws=DEFAULT_DRAWS, seed=0, details=False):
    """WAIC ``= -2 (lppd - p_waic)``; lower is better."""
    res = waic_from_loglik(pointwise_loglik_draws(summary, n_draws, seed))
    summary.waic = res.waic
    return res if details else res.waic
