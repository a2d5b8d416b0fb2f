"""Sequential consensus over data partitions.

Partitions are fitted in order. Each stage uses the moment-matched
posteriors of the fixed effects (joint Gaussian) and of the
hyperparameters (independent Gaussians on the internal scale) from the
stage before as its priors; each hyperparameter's spread is its marginal
sd under the stage's Hessian. The per-partition posteriors of the remaining
latent elements are then merged, either element by element with precision
weights or as a product of Gaussians over the whole latent vector.

A partition model may cover only part of the global latent layout (for
example the time knots of one block). Its ``latent_index`` maps each of
its elements to the global position.
"""
from dataclasses import dataclass, field
import warnings

import numpy as np
import scipy.sparse as sp

from .errors import EmptyPartition, LayoutMismatch, LucodaError, PartitionFitError, UninformedElement
from .inference import LatentModel, optimize_hyperparameters
from .inference.optimize import fd_hessian
from .inference.laplace import LaplaceFit, fit_gaussian_approx
from .sparse import CholeskyFactor

STRATEGIES = ("by-time-blocks", "by-likelihood-group", "by-observation-chunks")


@dataclass(frozen=True)
class PartitionPlan:
    """Assignment of every observation to one of ``n_p`` partitions."""

    strategy: str
    assignment: np.ndarray
    n_p: int

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or (a.size and (a.min() < 0 or a.max() >= self.n_p)):
            raise ValueError("assignment must hold partition ids in [0, n_p)")
        counts = np.bincount(a, minlength=self.n_p)
        if np.any(counts == 0):
            raise EmptyPartition(f"partitions {np.flatnonzero(counts == 0).tolist()} are empty")

    def indices(self, j):
        return np.flatnonzero(self.assignment == j)

    @property
    def sizes(self):
        return np.bincount(self.assignment, minlength=self.n_p)

    def rows(self):
        """``(observation id, partition id)`` pairs for plan files."""
        return [(int(i), int(p)) for i, p in enumerate(self.assignment)]


def plan_partitions(data, strategy="by-observation-chunks", n_p=2):
    """Split observations into ``n_p`` partitions.

    Parameters
    ----------
    data : int or array_like
        Number of observations for ``by-observation-chunks``; otherwise one
        label per observation: the time index for ``by-time-blocks`` (whole
        time slices stay together, consecutive slices form a block) or the
        likelihood group for ``by-likelihood-group``.
    strategy : str
    n_p : int
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose one of {STRATEGIES}")
    if n_p < 2:
        raise ValueError("sequential consensus needs at least two partitions")
    if strategy == "by-observation-chunks":
        n = int(data) if np.ndim(data) == 0 else len(data)
        if n_p > n:
            raise EmptyPartition(f"{n_p} partitions for {n} observations")
        if n_p == n:
            warnings.warn("singleton partitions", stacklevel=2)
        assignment = np.repeat(np.arange(n_p), [len(c) for c in np.array_split(np.arange(n), n_p)])
        return PartitionPlan(strategy, assignment, n_p)
    labels = np.asarray(data)
    units, inverse = np.unique(labels, return_inverse=True)
    if n_p > units.size:
        raise EmptyPartition(f"{n_p} partitions for {units.size} distinct labels")
    if n_p == labels.size:
        warnings.warn("singleton partitions", stacklevel=2)
    unit_part = np.repeat(np.arange(n_p), [len(c) for c in np.array_split(np.arange(units.size), n_p)])
    return PartitionPlan(strategy, unit_part[inverse.ravel()], n_p)


@dataclass
class PartitionModel:
    """A stage model and the global position of each of its latent elements."""

    model: LatentModel
    latent_index: np.ndarray = None


@dataclass
class StageResult:
    index: int
    observations: np.ndarray
    model: LatentModel
    latent_index: np.ndarray
    summary: object
    fixed_mean: np.ndarray
    fixed_cov: np.ndarray
    hyper_prior: dict


@dataclass
class SequentialState:
    """Outcome of :func:`sequential_fit`.

    ``fixed_mean`` / ``fixed_prec`` and ``hyper_mode`` / ``hyper_sd`` are the
    stage-``n_p`` posteriors; ``stages`` keeps every partition's fit for
    merging.
    """

    stages: list
    fixed_names: tuple
    fixed_mean: np.ndarray
    fixed_prec: np.ndarray
    hyper_names: list
    hyper_mode: np.ndarray
    hyper_sd: np.ndarray
    layout: LatentModel = None
    metadata: dict = field(default_factory=dict)

    @property
    def fixed_sd(self):
        return np.sqrt(np.diag(np.linalg.inv(self.fixed_prec)))

    def hyper_natural(self):
        model = self.stages[-1].model
        return model.natural(self.hyper_mode)


def _fixed_moments(summary):
    model = summary.model
    ft = model.fixed_term()
    if ft is None:
        return np.zeros(0), np.zeros((0, 0))
    s = model.slices[ft.name]
    mean = summary.mean[s].copy()
    second = np.zeros((ft.size, ft.size))
    for w, f in zip(summary.weights, summary.fits):
        mu = f.mode[s]
        second += w * (f.covariance_block(s) + np.outer(mu, mu))
    cov = second - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


def _as_partition(obj, n_global):
    pm = obj if isinstance(obj, PartitionModel) else PartitionModel(obj)
    if pm.latent_index is None:
        pm.latent_index = np.arange(pm.model.N)
    pm.latent_index = np.asarray(pm.latent_index, dtype=int)
    if pm.latent_index.size != pm.model.N:
        raise LayoutMismatch(f"latent_index has {pm.latent_index.size} entries for {pm.model.N} latent elements")
    if n_global is not None and pm.latent_index.size and pm.latent_index.max() >= n_global:
        raise LayoutMismatch("latent_index points outside the global layout")
    return pm


def _hyper_sd(summary, carrier):
    model = summary.model
    sd = summary.theta_sd.copy()
    if carrier == "marginal" and model.free:
        H = fd_hessian(model, summary.mode_fit)
        if np.all(np.isfinite(H)):
            try:
                np.linalg.cholesky(-H)
                sd[model.free] = np.sqrt(np.diag(np.linalg.inv(-H)))
            except np.linalg.LinAlgError:
                pass
    return sd


def sequential_fit(builder, plan, init_priors=None, layout=None, strategy="ascent+grid", hyper_carrier="marginal"):
    """Fit the partitions of ``plan`` in order, passing posteriors forward.

    Parameters
    ----------
    builder : callable
        ``builder(observation_indices)`` returns a :class:`LatentModel` or a
        :class:`PartitionModel` for that subset.
    plan : PartitionPlan
    init_priors : dict, optional
        Stage-1 priors with keys ``fixed_mean``, ``fixed_prec`` and
        ``hypers`` (``{name: (mean, sd)}`` on the internal scale).
    layout : LatentModel, optional
        Global latent layout used by the merge; defaults to the first
        partition's model.
    strategy : str
        Hyperparameter exploration strategy per stage.
    hyper_carrier : {"marginal", "conditional"}
        Spread of the Gaussian carried forward for each hyperparameter:
        the marginal sd from the full finite-difference Hessian at the stage
        mode (default), or the curvature along its own axis only.
    """
    n_global = None if layout is None else layout.N
    priors = dict(init_priors or {})
    stages = []
    for j in range(plan.n_p):
        obs = plan.indices(j)
        try:
            pm = _as_partition(builder(obs), n_global)
            model = pm.model
            if priors:
                model = model.with_priors(priors.get("fixed_mean"), priors.get("fixed_prec"), priors.get("hypers"))
            summary = optimize_hyperparameters(model, strategy=strategy)
            fmean, fcov = _fixed_moments(summary)
            hsd = _hyper_sd(summary, hyper_carrier)
        except LucodaError as e:
            raise PartitionFitError(j, str(e)) from e
        hp = {
            model.hypers[i].name: (float(summary.theta_mode[i]), float(max(hsd[i], 1e-3)))
            for i in model.free
        }
        stages.append(StageResult(j, obs, model, pm.latent_index, summary, fmean, fcov, priors.get("hypers")))
        priors = {"hypers": hp}
        if fmean.size:
            priors["fixed_mean"] = fmean
            priors["fixed_prec"] = np.linalg.inv(fcov)
    last = stages[-1]
    ft = last.model.fixed_term()
    return SequentialState(
        stages=stages,
        fixed_names=() if ft is None else ft.names,
        fixed_mean=last.fixed_mean,
        fixed_prec=np.linalg.inv(last.fixed_cov) if last.fixed_mean.size else np.zeros((0, 0)),
        hyper_names=last.model.hyper_names,
        hyper_mode=last.summary.theta_mode.copy(),
        hyper_sd=last.summary.theta_sd.copy(),
        layout=layout if layout is not None else stages[0].model,
        metadata={"strategy": plan.strategy, "n_partitions": plan.n_p, "hyper_carrier": f"gaussian-internal-{hyper_carrier}"},
    )


@dataclass
class MergedPosterior:
    """Merged latent posterior on the global layout.

    ``weights`` (marginal mode) is a list of ``(global index, stage ids,
    weights)`` for elements informed by more than one partition.
    """

    mode: str
    mean: np.ndarray
    sd: np.ndarray
    layout: LatentModel
    fixed_mean: np.ndarray
    fixed_sd: np.ndarray
    hyper_mode: np.ndarray
    weights: list = None
    gaussian: LaplaceFit = None
    metadata: dict = field(default_factory=dict)

    def slice(self, name):
        s = self.layout.slices[name]
        return self.mean[s], self.sd[s]


def _coverage(state, N):
    cover = np.zeros(N, dtype=int)
    for st in state.stages:
        cover[st.latent_index] += 1
    if np.any(cover == 0):
        raise UninformedElement(f"global latent elements {np.flatnonzero(cover == 0)[:10].tolist()} are not in any partition")
    return cover


def _fixed_global(layout):
    ft = layout.fixed_term()
    return np.arange(0) if ft is None else np.arange(layout.N)[layout.slices[ft.name]]


def merge_random_effects(state, mode="multivariate", prior_correction=True, refit=True):
    """Combine per-partition posteriors of the latent elements.

    Parameters
    ----------
    state : SequentialState
    mode : {"marginal", "multivariate"}
        ``marginal`` weights each element's partition means by their
        precisions; ``multivariate`` multiplies the partitions' Gaussian
        approximations over the whole latent vector.
    prior_correction : bool
        In multivariate mode, divide out each stage's prior so that the
        global prior is counted once. ``False`` gives the plain product.
    refit : bool
        In multivariate mode, re-evaluate every partition's Gaussian
        approximation at the final consensus hyperparameters before
        multiplying, so all likelihood factors share one ``theta``. Costs one
        fixed-``theta`` Laplace fit per partition.

    Returns
    -------
    MergedPosterior
        In multivariate mode the fixed effects come from the joint product
        and the carried-forward estimate of the last sequential stage is
        kept in ``metadata["fixed_sequential_mean"]``. The carried-forward
        prior ignores the correlation between fixed effects and shared
        random effects, so only the product is exact when partitions share
        a field. Marginal mode reports the sequential estimate.
    """
    layout = state.layout
    N = layout.N
    _coverage(state, N)
    fixed_idx = _fixed_global(layout)
    if mode == "marginal":
        merged = _merge_marginal(state, N)
    elif mode == "multivariate":
        merged = _merge_multivariate(state, layout, prior_correction, refit)
    else:
        raise ValueError(f"unknown merge mode {mode!r}")
    mean, sd, extra = merged
    meta = {"weights": "precision" if mode == "marginal" else "product", "prior_correction": bool(prior_correction)}
    if mode == "multivariate":
        meta["refit"] = bool(refit)
    fixed_mean, fixed_sd = state.fixed_mean, state.fixed_sd if state.fixed_mean.size else np.zeros(0)
    if fixed_idx.size:
        meta["fixed_sequential_mean"] = fixed_mean.copy()
        meta["fixed_sequential_sd"] = fixed_sd.copy()
        if mode == "multivariate":
            fixed_mean, fixed_sd = mean[fixed_idx].copy(), sd[fixed_idx].copy()
        else:
            mean, sd = mean.copy(), sd.copy()
            mean[fixed_idx] = fixed_mean
            sd[fixed_idx] = fixed_sd
    return MergedPosterior(
        mode=mode,
        mean=mean,
        sd=sd,
        layout=layout,
        fixed_mean=fixed_mean,
        fixed_sd=fixed_sd,
        hyper_mode=state.hyper_mode,
        weights=extra.get("weights"),
        gaussian=extra.get("gaussian"),
        metadata=meta,
    )


def merge_marginals(means, variances):
    """Precision-weighted combination of independent Gaussian marginals.

    Returns ``(mean, variance, weights)``.
    """
    tau = 1.0 / np.asarray(variances, dtype=float)
    w = tau / tau.sum()
    return float(w @ np.asarray(means, dtype=float)), float(1.0 / tau.sum()), w


def _merge_marginal(state, N):
    num = np.zeros(N)
    den = np.zeros(N)
    members = [[] for _ in range(N)]
    for st in state.stages:
        m, s = st.summary.mean, st.summary.sd
        tau = 1.0 / np.maximum(s, 1e-300) ** 2
        np.add.at(num, st.latent_index, tau * m)
        np.add.at(den, st.latent_index, tau)
        for k, g in enumerate(st.latent_index):
            members[g].append((st.index, tau[k]))
    weights = []
    for g, mem in enumerate(members):
        if len(mem) > 1:
            ids = np.array([a for a, _ in mem])
            t = np.array([b for _, b in mem])
            weights.append((g, ids, t / t.sum()))
    return num / den, np.sqrt(1.0 / den), {"weights": weights}


def _stage_fit(st, theta, refit):
    f = st.summary.mode_fit
    if not refit or np.array_equal(f.theta, theta):
        return f
    try:
        return fit_gaussian_approx(st.model, theta, z0=f.mode)
    except LucodaError as e:
        raise PartitionFitError(st.index, f"refit at consensus hyperparameters failed: {e}") from e


def _merge_multivariate(state, layout, prior_correction, refit=True):
    N = layout.N
    h_final = state.stages[-1].model.natural(state.hyper_mode)
    Qm = sp.csr_matrix((N, N))
    bm = np.zeros(N)
    if prior_correction:
        Qb, _ = layout.prior_precision(h_final)
        Qm = Qm + Qb
        bm += Qb @ layout.m0
    for st in state.stages:
        f = _stage_fit(st, state.hyper_mode, refit)
        H = sp.csr_matrix(f.H)
        b = H @ f.mode
        if prior_correction:
            Qj, _ = st.model.prior_precision(f.h)
            H = H - Qj
            b = b - Qj @ st.model.m0
        n_j = st.latent_index.size
        P = sp.csr_matrix((np.ones(n_j), (np.arange(n_j), st.latent_index)), shape=(n_j, N))
        Qm = Qm + P.T @ H @ P
        bm += P.T @ b
    Qm = sp.csr_matrix(0.5 * (Qm + Qm.T))
    C = layout.C
    Qt = Qm + sp.csr_matrix(C.T @ C) if C is not None else Qm
    F = CholeskyFactor(Qt)
    mu = F.solve(bm)
    if C is not None:
        V = F.solve(C.T)
        mu = mu - V @ np.linalg.solve(C @ V, C @ mu)
    g = LaplaceFit(state.hyper_mode, h_final, mu, Qm, F, np.nan, np.nan, 0, 0.0, C)
    return mu, g.marginal_sd(), {"gaussian": g}


@dataclass
class ConsensusReport:
    """Consensus against full-data fit.

    ``rows`` are ``(slice, n, rmse_sd_units, max_abs_sd_units)``; hyper rows
    are ``(name, consensus_mode, full_mode, difference)`` on the internal
    scale.
    """

    rows: list
    hyper_rows: list
    fixed_rows: list

    def latent_rmse(self, name):
        return next(r[2] for r in self.rows if r[0] == name)

    def table(self):
        out = [("kind", "name", "n_or_consensus", "rmse_or_full", "max_or_diff")]
        out += [("latent",) + tuple(r) for r in self.rows]
        out += [("fixed",) + tuple(r) for r in self.fixed_rows]
        out += [("hyper",) + tuple(r) for r in self.hyper_rows]
        return out


def consensus_vs_full_report(merged, full_fit):
    """Posterior-mean differences in full-fit sd units per latent slice.

    Parameters
    ----------
    merged : MergedPosterior
    full_fit : PosteriorSummary
        Unpartitioned fit on the same layout.
    """
    lay, full = merged.layout, full_fit.model
    if lay.N != full.N or list(lay.slices) != list(full.slices) or any(
        lay.slices[k] != full.slices[k] for k in lay.slices
    ):
        raise LayoutMismatch("consensus and full fits have different latent layouts")
    if len(merged.hyper_mode) != len(full.hypers):
        raise LayoutMismatch("consensus and full fits have different hyperparameters")
    rows = []
    ft = full.fixed_term()
    for name, s in full.slices.items():
        z = (merged.mean[s] - full_fit.mean[s]) / np.maximum(full_fit.sd[s], 1e-300)
        if z.size:
            rows.append((name, int(z.size), float(np.sqrt(np.mean(z**2))), float(np.max(np.abs(z)))))
    fixed_rows = []
    if ft is not None:
        s = full.slices[ft.name]
        for k, nm in enumerate(ft.names):
            i = s.start + k
            fixed_rows.append(
                (nm, float(merged.mean[i]), float(full_fit.mean[i]), float((merged.mean[i] - full_fit.mean[i]) / full_fit.sd[i]))
            )
    hyper_rows = [
        (h.name, float(a), float(b), float(a - b)) for h, a, b in zip(full.hypers, merged.hyper_mode, full_fit.theta_mode)
    ]
    return ConsensusReport(rows, hyper_rows, fixed_rows)
