"""Synthetic data from an assembled latent model."""
import numpy as np
from scipy.special import expit

from ..spde import sample_gmrf
from .terms import FixedEffects


def draw_latent(model, h, rng, fixed=None):
    """Draw every term from its prior; fixed effects take ``fixed`` values.

    ``fixed`` maps coefficient names to values; missing coefficients use the
    prior mean.
    """
    z = np.zeros(model.N)
    fixed = fixed or {}
    for t in model.terms:
        s = model.slices[t.name]
        if isinstance(t, FixedEffects):
            z[s] = [fixed.get(nm, m) for nm, m in zip(t.names, t.mean)]
            continue
        Q, _ = t.precision(h)
        z[s] = sample_gmrf(Q, constraint=t.constraints, rng=rng)
    return z


def simulate(model, theta, seed, fixed=None, z=None):
    """Draw the latent field (unless given) and one response per block.

    Returns
    -------
    y : dict of block name -> ndarray
    z : ndarray
        Latent vector used.
    """
    rng = np.random.default_rng(seed)
    h = model.natural(theta)
    if z is None:
        z = draw_latent(model, h, rng, fixed)
    eta = model.A(h) @ z + model.offset
    y = {}
    for b in model.blocks:
        y[b.name] = b.family.sample(eta[model.block_rows[b.name]], h, rng)
    return y, z


def beta_hurdle_draw(eta_value, eta_incidence, phi, rng):
    """Two-stage draw: ``Z ~ Bernoulli(expit(eta_incidence))`` then
    ``Y | Z = 1 ~ Beta(mu, phi)`` with ``mu = expit(eta_value)``; ``Y = 0``
    when ``Z = 0``."""
    eta_value = np.asarray(eta_value, dtype=float)
    z = rng.random(eta_value.shape) < expit(eta_incidence)
    mu = expit(eta_value)
    y = np.clip(rng.beta(mu * phi, (1.0 - mu) * phi), 1e-12, 1.0 - 1e-12)
    return np.where(z, y, 0.0), z.astype(np.int8)
