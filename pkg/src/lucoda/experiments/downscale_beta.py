"""Downscaling studies on one Voronoi support.

``beta`` recipe::

    y_it ~ Beta(mu_it, phi),
    logit mu_it = beta_0 + beta_1 x_it + (1/n_i) sum_{s in C_i} u(s) + v_t

with ``u`` a Matern (SPDE) field on a mesh covering the unit square and
``v`` a stationary AR(1) over time knots. Only area averages are observed;
recovery of ``u`` is scored on a lattice of points.

``alr`` recipe: three-part compositions whose two ALR coordinates are
Gaussian area averages of their own SPDE fields plus a covariate effect.
Simulated covariates stand in for the real ones.
"""
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from ..coda import alr_matrix
from ..downscale import aggregation_matrix, integration_points
from ..geometry import lattice_points
from ..inference import (
    AR1,
    SPDE,
    Component,
    FixedEffects,
    LatentModel,
    LikelihoodBlock,
    optimize_hyperparameters,
    precision_hyper,
    unit_hyper,
)
from ..likelihood import Beta, Gaussian
from ..precision import ar1_precision
from ..spde import SpdeParams, assemble_fem, projection, sample_gmrf, spde_precision, structured_mesh
from .common import UNIT_BOX, VoronoiSupportRequest, voronoi_support


@dataclass(frozen=True)
class DownscaleConfig:
    n_areas: int = 100
    n_times: int = 4
    mesh_n: int = 20
    range_: float = 0.4
    sigma: float = 1.0
    beta0: float = -0.5
    beta1: float = 0.5
    phi: float = 20.0
    tau_t: float = 10.0
    rho_t: float = 0.7
    lattice_n: int = 30
    min_points: int = 25
    strategy: str = "ascent"


def lattice(n, bbox=UNIT_BOX):
    return lattice_points(bbox, n)


def geometry(cfg, seed):
    support, graph, seeds = voronoi_support(VoronoiSupportRequest(n_seeds=cfg.n_areas, seed=seed))
    mesh = structured_mesh(UNIT_BOX, cfg.mesh_n, cfg.mesh_n)
    fem = assemble_fem(mesh)
    scheme = integration_points(support, mesh, min_points=cfg.min_points)
    agg = aggregation_matrix(scheme, mesh)
    return dict(support=support, graph=graph, mesh=mesh, fem=fem, scheme=scheme, agg=agg)


def simulate_data(cfg, seed):
    rng = np.random.default_rng(seed)
    geo = geometry(cfg, seed)
    p = SpdeParams.from_range_sigma(cfg.range_, cfg.sigma)
    u = sample_gmrf(spde_precision(geo["fem"], p), rng=rng)
    v = sample_gmrf(ar1_precision(cfg.n_times, cfg.tau_t, cfg.rho_t), rng=rng)
    na, nt = cfg.n_areas, cfg.n_times
    area = np.tile(np.arange(na), nt)
    time = np.repeat(np.arange(nt), na)
    x = rng.standard_normal(area.size)
    eta = cfg.beta0 + cfg.beta1 * x + (geo["agg"].A @ u)[area] + v[time]
    mu = 1.0 / (1.0 + np.exp(-eta))
    y = rng.beta(mu * cfg.phi, (1.0 - mu) * cfg.phi)
    y = np.clip(y, 1e-6, 1.0 - 1e-6)
    return dict(geo=geo, u=u, v=v, area=area, time=time, x=x, y=y)


def beta_model(data, cfg):
    geo, area, time = data["geo"], data["area"], data["time"]
    n = area.size
    A_u = sp.csr_matrix(geo["agg"].A[area])
    A_v = sp.csr_matrix((np.ones(n), (np.arange(n), time)), shape=(n, cfg.n_times))
    X = np.column_stack([np.ones(n), data["x"]])
    block = LikelihoodBlock(
        "y", Beta("phi"), data["y"], [Component("fixed", X), Component("u", A_u), Component("v", A_v)]
    )
    terms = [
        FixedEffects(["beta0", "beta1"]),
        SPDE("u", geo["fem"], range_="range", sigma="sigma"),
        AR1("v", cfg.n_times, tau="tau_t", phi="rho_t"),
    ]
    hypers = [
        precision_hyper("range", np.log(0.5)),
        precision_hyper("sigma", 0.0),
        precision_hyper("phi", np.log(10.0)),
        precision_hyper("tau_t", np.log(10.0)),
        unit_hyper("rho_t", 0.5),
    ]
    return LatentModel(terms, [block], hypers)


def field_correlation(summary, data, cfg):
    """Pearson correlation of fitted and true ``u`` on the lattice."""
    pts = lattice(cfg.lattice_n)
    P = projection(data["geo"]["mesh"], pts).A
    u_hat, _ = summary.slice("u")
    return float(np.corrcoef(P @ u_hat, P @ data["u"])[0, 1])


def constant_field_error(agg, c=1.7):
    """Largest deviation of area averages of a constant field from ``c``."""
    return float(np.max(np.abs(agg.A @ np.full(agg.A.shape[1], c) - c)))


def run_replicate(seed, cfg=DownscaleConfig()):
    data = simulate_data(cfg, seed)
    s = optimize_hyperparameters(beta_model(data, cfg), strategy=cfg.strategy)
    out = {
        "seed": seed,
        "pearson_r": field_correlation(s, data, cfg),
        "constant_field_error": constant_field_error(data["geo"]["agg"]),
        "hypers": s.hyper_natural(),
    }
    return out, data, s


def run(n_replicates=10, base_seed=41000, cfg=DownscaleConfig()):
    results = [run_replicate(base_seed + r, cfg)[0] for r in range(n_replicates)]
    r = np.array([x["pearson_r"] for x in results])
    return {
        "config": asdict(cfg),
        "replicates": results,
        "median_pearson_r": float(np.median(r)),
        "max_constant_field_error": float(max(x["constant_field_error"] for x in results)),
    }


# -- ALR recipe ---------------------------------------------------------------
@dataclass(frozen=True)
class AlrDownscaleConfig:
    n_areas: int = 60
    mesh_n: int = 16
    range_: float = 0.4
    sigma: float = 0.8
    beta: tuple = ((0.3, 0.6), (-0.2, -0.4))
    noise_sd: float = 0.1
    lattice_n: int = 30
    min_points: int = 25
    strategy: str = "ascent"


def simulate_alr(cfg, seed):
    rng = np.random.default_rng(seed)
    geo = geometry(cfg, seed)
    p = SpdeParams.from_range_sigma(cfg.range_, cfg.sigma)
    Q = spde_precision(geo["fem"], p)
    us = [sample_gmrf(Q, rng=rng) for _ in cfg.beta]
    x = rng.standard_normal(cfg.n_areas)
    z = np.column_stack(
        [b0 + b1 * x + geo["agg"].A @ u + cfg.noise_sd * rng.standard_normal(cfg.n_areas) for (b0, b1), u in zip(cfg.beta, us)]
    )
    parts = np.column_stack([np.exp(z), np.ones(cfg.n_areas)])
    Y = parts / parts.sum(axis=1, keepdims=True)
    return dict(geo=geo, u=us, x=x, Y=Y)


def alr_model(data, cfg):
    geo = data["geo"]
    n = cfg.n_areas
    Z = alr_matrix(data["Y"], r=data["Y"].shape[1] - 1).values
    blocks, terms, hypers = [], [], []
    names = []
    for k in range(Z.shape[1]):
        names += [f"b0_{k + 1}", f"b1_{k + 1}"]
    terms.append(FixedEffects(names))
    for k in range(Z.shape[1]):
        X = np.zeros((n, len(names)))
        X[:, 2 * k] = 1.0
        X[:, 2 * k + 1] = data["x"]
        blocks.append(
            LikelihoodBlock(
                f"alr{k + 1}",
                Gaussian(prec_hyper=f"tau{k + 1}"),
                Z[:, k],
                [Component("fixed", X), Component(f"u{k + 1}", geo["agg"].A)],
            )
        )
        terms.append(SPDE(f"u{k + 1}", geo["fem"], range_="range", sigma=f"sigma{k + 1}"))
        hypers += [precision_hyper(f"tau{k + 1}", np.log(50.0)), precision_hyper(f"sigma{k + 1}", 0.0)]
    hypers.append(precision_hyper("range", np.log(0.5)))
    return LatentModel(terms, blocks, hypers)


def run_alr(seed=51000, cfg=AlrDownscaleConfig()):
    data = simulate_alr(cfg, seed)
    s = optimize_hyperparameters(alr_model(data, cfg), strategy=cfg.strategy)
    pts = lattice(cfg.lattice_n)
    P = projection(data["geo"]["mesh"], pts).A
    r = [float(np.corrcoef(P @ s.slice(f"u{k + 1}")[0], P @ u)[0, 1]) for k, u in enumerate(data["u"])]
    return {"seed": seed, "pearson_r": r, "hypers": s.hyper_natural()}, data, s
