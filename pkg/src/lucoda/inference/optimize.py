"""Hyperparameter exploration and posterior summaries.

Coordinate ascent followed by a Nelder-Mead polish locates the mode of
the approximate hyperparameter posterior; a centred grid of three points per dimension (at most five
dimensions) then provides the mixture weights for latent marginals.
"""
from dataclasses import dataclass, field
import itertools

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar
from scipy.stats import norm

from ..errors import AllGridPointsFailed, LucodaError
from .laplace import fit_gaussian_approx

MAX_GRID_DIMS = 5
FD_STEP = 0.1


@dataclass
class PosteriorSummary:
    model: object
    theta_mode: np.ndarray
    theta_sd: np.ndarray
    fits: list
    weights: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    waic: float = None
    component_sd: np.ndarray = None

    @property
    def mode_fit(self):
        return self.fits[self.diagnostics.get("mode_index", 0)]

    def slice(self, name):
        s = self.model.slices[name]
        return self.mean[s], self.sd[s]

    def hyper_natural(self):
        return self.model.natural(self.theta_mode)

    # -- fixed effects -----------------------------------------------------
    def _mixture_cdf(self, i, x):
        return sum(
            w * norm.cdf(x, f.mode[i], s)
            for w, f, s in zip(self.weights, self.fits, self._sds[:, i])
        )

    @property
    def _sds(self):
        if self.component_sd is None:
            self.component_sd = np.array([f.marginal_sd() for f in self.fits])
        return self.component_sd

    def quantile(self, i, p):
        m, s = self.mean[i], max(self.sd[i], 1e-12)
        lo, hi = m - 12 * s, m + 12 * s
        return float(brentq(lambda x: self._mixture_cdf(i, x) - p, lo, hi, xtol=1e-12 * max(1.0, abs(m))))

    def fixed_table(self):
        """Rows ``(name, mean, sd, q025, q50, q975)`` for every fixed effect."""
        rows = []
        for t in self.model.terms:
            if not hasattr(t, "names"):
                continue
            s = self.model.slices[t.name]
            for k, nm in enumerate(t.names):
                i = s.start + k
                rows.append(
                    (nm, float(self.mean[i]), float(self.sd[i]),
                     self.quantile(i, 0.025), self.quantile(i, 0.5), self.quantile(i, 0.975))
                )
        return rows

    def hyper_table(self):
        rows = []
        for h, x, s in zip(self.model.hypers, self.theta_mode, self.theta_sd):
            rows.append(
                (h.name, float(x), float(s), h.to_natural(x),
                 h.to_natural(x - 1.959963984540054 * s), h.to_natural(x + 1.959963984540054 * s))
            )
        return rows


def _safe_fit(model, theta, z0):
    try:
        return fit_gaussian_approx(model, theta, z0=z0)
    except (LucodaError, np.linalg.LinAlgError, FloatingPointError):
        return None


def coordinate_ascent(model, theta, z0=None, max_sweeps=2, window=2.0, tol=1e-3, xatol=1e-3, polish=True):
    """Maximise the approximate log posterior of the free hyperparameters.

    A few bounded line searches along each coordinate give a robust start;
    a simplex polish then follows ridges where coordinates are coupled.
    """
    theta = np.array(theta, dtype=float)
    best = _safe_fit(model, theta, z0)
    if best is None:
        best = _safe_fit(model, theta, None)
    if best is None:
        raise AllGridPointsFailed("fit failed at the initial hyperparameters")
    n_eval = 1
    free = model.free
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        start = best.log_posterior
        for i in free:
            hp = model.hypers[i]
            lo = max(hp.lower, theta[i] - window)
            hi = min(hp.upper, theta[i] + window)
            cache = {}

            def obj(x):
                th = theta.copy()
                th[i] = x
                f = _safe_fit(model, th, best.mode)
                cache[x] = f
                return 1e300 if f is None else -f.log_posterior

            res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": xatol})
            n_eval += res.nfev
            f = cache.get(res.x)
            if f is not None and f.log_posterior > best.log_posterior:
                best = f
                theta = f.theta.copy()
        if best.log_posterior - start < tol:
            break
    diag = {"sweeps": sweeps, "evaluations": n_eval}
    if polish and free:
        best, n_pol = _polish(model, best)
        diag["evaluations"] += n_pol
    return best, diag


def _polish(model, start, simplex_step=0.2, xatol=1e-3, fatol=1e-4, max_evals=1500):
    free = list(model.free)
    lo = np.array([model.hypers[i].lower for i in free])
    hi = np.array([model.hypers[i].upper for i in free])
    state = {"best": start, "n": 0}

    def fun(x):
        th = state["best"].theta.copy()
        th[free] = x
        f = _safe_fit(model, th, state["best"].mode)
        state["n"] += 1
        if f is None:
            return 1e300
        if f.log_posterior > state["best"].log_posterior:
            state["best"] = f
        return -f.log_posterior

    x0 = start.theta[free]
    simplex = np.vstack([x0] + [x0 + simplex_step * e for e in np.eye(x0.size)])
    simplex = np.clip(simplex, lo, hi)
    # Nelder-Mead copes with the ridges and the small evaluation noise of
    # the inner Newton solve better than finite-difference quasi-Newton.
    minimize(fun, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
             options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol, "maxfev": max_evals})
    return state["best"], state["n"]


def _fd_sd(model, fit):
    sds = np.zeros(len(model.hypers))
    for i in model.free:
        hp = model.hypers[i]
        vals = []
        for d in (-FD_STEP, FD_STEP):
            th = fit.theta.copy()
            th[i] = np.clip(th[i] + d, hp.lower, hp.upper)
            f = _safe_fit(model, th, fit.mode)
            vals.append(None if f is None else (f.log_posterior, th[i] - fit.theta[i]))
        if None in vals or vals[0][1] == 0 or vals[1][1] == 0:
            sds[i] = 1.0
            continue
        (f1, d1), (f2, d2) = vals
        # curvature from three unequally spaced points
        c = 2.0 * (f1 / (d1 * (d1 - d2)) + f2 / (d2 * (d2 - d1)) + fit.log_posterior / (d1 * d2))
        sds[i] = 1.0 / np.sqrt(-c) if c < 0 else 3.0
    return np.clip(sds, 0.0, 3.0)


def fd_hessian(model, fit, step=FD_STEP):
    """Central-difference Hessian of the log posterior over the free hyperparameters."""
    free = list(model.free)
    k = len(free)
    H = np.zeros((k, k))
    f0 = fit.log_posterior

    def lp(offsets):
        th = fit.theta.copy()
        th[free] += offsets
        f = _safe_fit(model, th, fit.mode)
        return np.nan if f is None else f.log_posterior

    E = np.eye(k) * step
    for a in range(k):
        H[a, a] = (lp(E[a]) - 2.0 * f0 + lp(-E[a])) / step**2
        for b in range(a):
            v = (lp(E[a] + E[b]) - lp(E[a] - E[b]) - lp(E[b] - E[a]) + lp(-E[a] - E[b])) / (4.0 * step**2)
            H[a, b] = H[b, a] = v
    return H


def _mixture(fits, w):
    means = np.array([f.mode for f in fits])
    var = np.array([f.marginal_var() for f in fits])
    mean = w @ means
    second = w @ (var + means**2)
    return mean, np.sqrt(np.maximum(second - mean**2, 0.0)), np.sqrt(var)


def optimize_hyperparameters(model, init=None, strategy="ascent+grid", grid=None, **kw):
    """Explore the hyperparameter posterior.

    Parameters
    ----------
    model : LatentModel
    init : array_like, optional
        Starting point on the internal scale (defaults to each ``init``).
    strategy : {"ascent+grid", "ascent", "grid"}
        ``ascent`` keeps only the mode; ``grid`` evaluates the explicit
        ``grid`` list of internal-scale points without optimising.
    """
    theta = model.theta0() if init is None else np.asarray(init, dtype=float)
    diag = {}
    if strategy == "grid":
        if grid is None:
            raise ValueError("strategy 'grid' needs explicit grid points")
        points = [np.asarray(g, dtype=float) for g in grid]
        fits = [_safe_fit(model, p, None) for p in points]
        sd = np.zeros(len(model.hypers))
        mode_fit = None
    else:
        mode_fit, diag = coordinate_ascent(model, theta, **kw)
        sd = _fd_sd(model, mode_fit) if model.free else np.zeros(len(model.hypers))
        points, fits = [mode_fit.theta], [mode_fit]
        if strategy == "ascent+grid" and model.free:
            dims = sorted(model.free, key=lambda i: (-sd[i], i))[:MAX_GRID_DIMS]
            diag["grid_dims"] = [model.hypers[i].name for i in dims]
            for offs in itertools.product((-1.0, 0.0, 1.0), repeat=len(dims)):
                if not any(offs):
                    continue
                th = mode_fit.theta.copy()
                for i, o in zip(dims, offs):
                    hp = model.hypers[i]
                    th[i] = np.clip(th[i] + o * sd[i], hp.lower, hp.upper)
                points.append(th)
                fits.append(_safe_fit(model, th, mode_fit.mode))
        elif strategy not in ("ascent", "ascent+grid"):
            raise ValueError(f"unknown strategy {strategy!r}")
    ok = [k for k, f in enumerate(fits) if f is not None]
    if not ok:
        raise AllGridPointsFailed("every hyperparameter grid point failed")
    fits = [fits[k] for k in ok]
    lp = np.array([f.log_posterior for f in fits])
    w = np.exp(lp - lp.max())
    w /= w.sum()
    mean, sdl, comp_sd = _mixture(fits, w)
    if mode_fit is None:
        k = int(np.argmax(lp))
        mode_theta = fits[k].theta
        diag["mode_index"] = k
    else:
        mode_theta = mode_fit.theta
        diag["mode_index"] = 0
    diag["n_grid"] = len(fits)
    diag["newton_iterations"] = fits[diag["mode_index"]].iterations
    diag["grad_norm"] = fits[diag["mode_index"]].grad_norm
    return PosteriorSummary(model, np.array(mode_theta), sd, fits, w, mean, sdl, diag, component_sd=comp_sd)
