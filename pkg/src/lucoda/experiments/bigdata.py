"""Sequential consensus on a shrunk space-time downscaling problem.

Two ALR coordinates are observed as area averages over two Voronoi
supports (one per half of the time knots)::

    z_kit = beta_0k + beta_1k x_it + (A u_k)_it + e_kit,
    u_k ~ N(0, (Q_spde(range, sigma_k) (x) Q_ar1(rho_t))^{-1})

The consensus run partitions the observations into contiguous time blocks.
Each partition model covers only its block's knots: the marginal of a
stationary AR(1) on contiguous knots is again AR(1), so the restricted
prior is exactly the marginal of the full one. The full and partitioned
fits run in separate processes so that their peak resident memory can be
compared.
"""
from dataclasses import asdict, dataclass
import multiprocessing as mp
import queue as queue_mod
import resource
import time as _time

import numpy as np
import scipy.sparse as sp

from ..consensus import (
    PartitionModel,
    consensus_vs_full_report,
    merge_random_effects,
    plan_partitions,
    sequential_fit,
)
from ..downscale import AreaSupport, stacked_support_matrix
from ..inference import (
    AR1,
    SPDE,
    Component,
    FixedEffects,
    Kron,
    LatentModel,
    LikelihoodBlock,
    optimize_hyperparameters,
    precision_hyper,
    unit_hyper,
)
from ..likelihood import Gaussian
from ..precision import ar1_precision, kronecker_interaction
from ..spde import SpdeParams, assemble_fem, sample_gmrf, spde_precision, structured_mesh
from .common import UNIT_BOX, VoronoiSupportRequest, voronoi_support


@dataclass(frozen=True)
class BigDataConfig:
    n_areas: int = 40
    n_times: int = 24
    n_alr: int = 2
    n_partitions: int = 6
    mesh_n: int = 10
    range_: float = 0.5
    sigmas: tuple = (1.0, 0.8)
    rho_t: float = 0.6
    beta: tuple = ((0.5, 0.4), (-0.3, -0.6))
    noise_sd: float = 0.2
    min_points: int = 16
    strategy: str = "ascent"
    merge: str = "multivariate"


def simulate_data(cfg, seed):
    rng = np.random.default_rng(seed)
    half = cfg.n_times // 2
    supports = []
    for k, period in enumerate(((0, half - 1), (half, None))):
        sup, _, _ = voronoi_support(VoronoiSupportRequest(n_seeds=cfg.n_areas, seed=seed + 1000 * k))
        supports.append(AreaSupport(sup.areas, period=period, name=f"support{k + 1}"))
    mesh = structured_mesh(UNIT_BOX, cfg.mesh_n, cfg.mesh_n)
    fem = assemble_fem(mesh)
    st = stacked_support_matrix(supports, mesh, np.arange(cfg.n_times), min_points=cfg.min_points)
    n_rows = st.A.shape[0]
    x = rng.standard_normal(n_rows)
    Qt = ar1_precision(cfg.n_times, 1.0, cfg.rho_t)
    us, z = [], []
    for k in range(cfg.n_alr):
        Qs = spde_precision(fem, SpdeParams.from_range_sigma(cfg.range_, cfg.sigmas[k]))
        u = sample_gmrf(kronecker_interaction(Qs, Qt, kind="IV"), rng=rng)
        b0, b1 = cfg.beta[k]
        us.append(u)
        z.append(b0 + b1 * x + st.A @ u + cfg.noise_sd * rng.standard_normal(n_rows))
    obs_alr = np.repeat(np.arange(cfg.n_alr), n_rows)
    obs_row = np.tile(np.arange(n_rows), cfg.n_alr)
    return dict(
        mesh=mesh, fem=fem, stacked=st, x=x, u=us, z=np.concatenate(z),
        obs_alr=obs_alr, obs_row=obs_row, obs_time=st.row_time[obs_row],
    )


def _hypers(cfg):
    hp = [precision_hyper("range", np.log(0.5)), unit_hyper("rho_t", 0.5)]
    for k in range(cfg.n_alr):
        hp += [precision_hyper(f"sigma{k + 1}", 0.0), precision_hyper(f"tau{k + 1}", np.log(10.0))]
    return hp


def _fixed_names(cfg):
    return [f"b{j}_{k + 1}" for k in range(cfg.n_alr) for j in (0, 1)]


def layout_model(data, cfg):
    """Global latent layout without data, used by the merge."""
    terms = [FixedEffects(_fixed_names(cfg))]
    for k in range(cfg.n_alr):
        terms.append(_field(data, cfg, k, cfg.n_times))
    return LatentModel(terms, [], _hypers(cfg))


def _field(data, cfg, k, nt):
    space = SPDE(f"s{k + 1}", data["fem"], range_="range", sigma=f"sigma{k + 1}")
    return Kron(f"u{k + 1}", space, AR1(f"t{k + 1}", nt, tau=1.0, phi="rho_t"))


def make_builder(data, cfg):
    """``builder(obs)`` for :func:`sequential_fit`; also builds the full model."""
    nt = cfg.n_times
    m = data["mesh"].n_vertices
    A = data["stacked"].A.tocsc()
    n_fixed = 2 * cfg.n_alr

    def builder(obs):
        obs = np.asarray(obs)
        times = np.unique(data["obs_time"][obs])
        t0, t1 = int(times.min()), int(times.max())
        if times.size != t1 - t0 + 1:
            raise ValueError("partition times must be contiguous")
        nb = t1 - t0 + 1
        cols = (np.arange(m)[:, None] * nt + np.arange(t0, t1 + 1)[None, :]).ravel()
        terms = [FixedEffects(_fixed_names(cfg))]
        blocks = []
        index = [np.arange(n_fixed)]
        for k in range(cfg.n_alr):
            sel = obs[data["obs_alr"][obs] == k]
            rows = data["obs_row"][sel]
            X = np.zeros((sel.size, n_fixed))
            X[:, 2 * k] = 1.0
            X[:, 2 * k + 1] = data["x"][rows]
            Ak = sp.csr_matrix(A[:, cols][rows])
            blocks.append(
                LikelihoodBlock(
                    f"alr{k + 1}", Gaussian(prec_hyper=f"tau{k + 1}"), data["z"][sel],
                    [Component("fixed", X), Component(f"u{k + 1}", Ak)],
                )
            )
            terms.append(_field(data, cfg, k, nb))
            index.append(n_fixed + k * m * nt + cols)
        return PartitionModel(LatentModel(terms, blocks, _hypers(cfg)), np.concatenate(index))

    return builder


def _peak_mb():
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def fit_full(cfg, seed):
    data = simulate_data(cfg, seed)
    t = _time.perf_counter()
    model = make_builder(data, cfg)(np.arange(data["z"].size)).model
    s = optimize_hyperparameters(model, strategy=cfg.strategy)
    return {
        "mean": s.mean, "sd": s.sd, "theta": s.theta_mode, "theta_sd": s.theta_sd,
        "seconds": _time.perf_counter() - t, "peak_mb": _peak_mb(), "summary": s,
    }


def fit_partitioned(cfg, seed, order=None):
    data = simulate_data(cfg, seed)
    t = _time.perf_counter()
    plan = plan_partitions(data["obs_time"], "by-time-blocks", cfg.n_partitions)
    if order is not None:
        remap = np.asarray(order)
        plan = type(plan)(plan.strategy, np.argsort(remap)[plan.assignment], plan.n_p)
    state = sequential_fit(make_builder(data, cfg), plan, layout=layout_model(data, cfg), strategy=cfg.strategy)
    merged = merge_random_effects(state, cfg.merge)
    return {
        "merged": merged, "fixed_mean": merged.fixed_mean, "fixed_sd": merged.fixed_sd,
        "seconds": _time.perf_counter() - t, "peak_mb": _peak_mb(),
    }


def _child(fn, cfg, seed, queue):
    out = fn(cfg, seed)
    out.pop("summary", None)
    if "merged" in out:
        m = out.pop("merged")
        out.update(mean=m.mean, sd=m.sd, theta=m.hyper_mode, metadata=m.metadata)
    queue.put(out)


def _in_subprocess(fn, cfg, seed):
    ctx = mp.get_context("spawn")
    q = ctx.Queue()
    p = ctx.Process(target=_child, args=(fn, cfg, seed, q))
    p.start()
    while True:
        try:
            out = q.get(timeout=5.0)
            break
        except queue_mod.Empty:
            if not p.is_alive():
                raise RuntimeError(f"{fn.__name__} subprocess exited with code {p.exitcode}") from None
    p.join()
    return out


def compare(full, part, n_fixed):
    """RMSE of latent means in full-fit sd units, fixed-effect differences."""
    z = (part["mean"] - full["mean"]) / full["sd"]
    fz = (part["fixed_mean"] - full["mean"][:n_fixed]) / full["sd"][:n_fixed]
    out = {
        "latent_rmse_sd": float(np.sqrt(np.mean(z[n_fixed:] ** 2))),
        "fixed_max_abs_sd": float(np.max(np.abs(fz))),
        "theta_diff": (part["theta"] - full["theta"]).tolist(),
    }
    if "metadata" in part and "fixed_sequential_mean" in part["metadata"]:
        sz = (part["metadata"]["fixed_sequential_mean"] - full["mean"][:n_fixed]) / full["sd"][:n_fixed]
        out["fixed_sequential_max_abs_sd"] = float(np.max(np.abs(sz)))
    return out


def run(seed=61000, cfg=BigDataConfig(), isolate=True):
    """Full and partitioned fits; in separate processes when ``isolate``."""
    if isolate:
        full = _in_subprocess(fit_full, cfg, seed)
        part = _in_subprocess(fit_partitioned, cfg, seed)
    else:
        full = fit_full(cfg, seed)
        part = fit_partitioned(cfg, seed)
        m = part.pop("merged")
        part.update(mean=m.mean, sd=m.sd, theta=m.hyper_mode, metadata=m.metadata)
    out = compare(full, part, 2 * cfg.n_alr)
    out.update(
        config=asdict(cfg), seed=seed,
        full_peak_mb=full["peak_mb"], partitioned_peak_mb=part["peak_mb"],
        full_seconds=full["seconds"], partitioned_seconds=part["seconds"],
    )
    return out
