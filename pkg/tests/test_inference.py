import numpy as np
import pytest
import scipy.sparse as sp
from scipy.stats import multivariate_normal, norm

from lucoda.errors import InsufficientDraws, SpecError
from lucoda.inference import (
    IID,
    RW1,
    Besag,
    Component,
    FixedEffects,
    LatentModel,
    LikelihoodBlock,
    Leroux,
    correlation_prefilter,
    fit_gaussian_approx,
    optimize_hyperparameters,
    precision_hyper,
    scale_hyper,
    simulate,
    stepwise_search,
    unit_hyper,
    waic,
)
from lucoda.inference.stepwise import difference_se
from lucoda.inference.waic import WaicResult, waic_from_loglik
from lucoda.likelihood import Bernoulli, Beta, Gaussian
from lucoda.precision import AdjacencyGraph


def gaussian_model(y, X, prec=0.001, log_tau=0.0, extra=None, extra_hypers=()):
    n, p = X.shape
    terms = [FixedEffects([f"b{k}" for k in range(p)], 0.0, prec)]
    comps = [Component("fixed", sp.csr_matrix(X))]
    if extra is not None:
        term, M = extra
        terms.append(term)
        comps.append(Component(term.name, sp.csr_matrix(M)))
    blk = LikelihoodBlock("y", Gaussian(log_tau=log_tau), y, comps)
    return LatentModel(terms, [blk], list(extra_hypers))


def dense_posterior(model, theta):
    h = model.natural(theta)
    Q, _ = model.prior_precision(h)
    Q = Q.toarray()
    A = model.A(h).toarray()
    tau = np.exp(model.blocks[0].family.log_tau)
    y = model.blocks[0].y
    H = Q + tau * A.T @ A
    b = Q @ model.m0 + tau * A.T @ y
    return np.linalg.solve(H, b), H, Q, A, tau


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def test_intercept_only_layout():
    m = gaussian_model(np.arange(5.0), np.ones((5, 1)))
    assert m.N == 1
    np.testing.assert_array_equal(m.A(m.natural([])).toarray(), np.ones((5, 1)))


def test_replicated_and_shared_layout():
    # three blocks, one Leroux replica each with common hyperparameters, one shared RW1
    g = AdjacencyGraph.from_pairs([(0, 1), (1, 2), (2, 3)], 4)
    nt = 3
    terms = [Leroux(f"space{k}", g, "tau_s", "lam") for k in range(3)] + [RW1("time", nt, "tau_t")]
    rows = np.arange(12)
    Ms = sp.csr_matrix((np.ones(12), (rows, rows // nt)), shape=(12, 4))
    Mt = sp.csr_matrix((np.ones(12), (rows, rows % nt)), shape=(12, nt))
    blocks = [
        LikelihoodBlock(f"y{k}", Gaussian(log_tau=0.0), np.zeros(12),
                        [Component(f"space{k}", Ms), Component("time", Mt, scale=None if k == 0 else f"a{k}")])
        for k in range(3)
    ]
    hypers = [precision_hyper("tau_s"), unit_hyper("lam"), precision_hyper("tau_t"),
              scale_hyper("a1"), scale_hyper("a2", 2.0)]
    m = LatentModel(terms, blocks, hypers)
    assert list(m.slices) == ["space0", "space1", "space2", "time"]
    assert m.N == 3 * 4 + nt
    # slices tile the latent vector
    cover = np.concatenate([np.arange(m.N)[s] for s in m.slices.values()])
    np.testing.assert_array_equal(cover, np.arange(m.N))
    A = m.A(m.natural(m.theta0())).toarray()
    t = m.slices["time"]
    np.testing.assert_allclose(A[24:36, t], 2.0 * A[0:12, t])
    Q, _ = m.prior_precision(m.natural(m.theta0()))
    s0, s1 = m.slices["space0"], m.slices["space1"]
    np.testing.assert_array_equal(Q.toarray()[s0, s0], Q.toarray()[s1, s1])


def test_spec_errors():
    X = np.ones((3, 1))
    with pytest.raises(SpecError, match="unknown term"):
        LatentModel([FixedEffects(["b0"])],
                    [LikelihoodBlock("y", Gaussian(log_tau=0.0), np.zeros(3), [Component("missing", X)])], [])
    with pytest.raises(SpecError, match="undeclared"):
        LatentModel([IID("u", 3, "tau_u")],
                    [LikelihoodBlock("y", Gaussian(log_tau=0.0), np.zeros(3), [Component("u", np.eye(3))])], [])
    with pytest.raises(SpecError, match="scaling"):
        LatentModel([FixedEffects(["b0"])],
                    [LikelihoodBlock("y", Gaussian(log_tau=0.0), np.zeros(3), [Component("fixed", X, "alpha")])], [])


# ---------------------------------------------------------------------------
# Gaussian approximation
# ---------------------------------------------------------------------------

def test_scalar_conjugate():
    m = gaussian_model(np.full(4, 2.0), np.ones((4, 1)), prec=1.0)
    fit = fit_gaussian_approx(m, [])
    assert fit.mode[0] == pytest.approx(8 / 5, abs=1e-12)
    assert fit.H.toarray()[0, 0] == pytest.approx(5.0, abs=1e-12)
    assert fit.iterations == 1
    assert fit.grad_norm < 1e-8


def test_bernoulli_balanced_mode():
    blk = LikelihoodBlock("z", Bernoulli(), np.tile([0.0, 1.0], 50), [Component("fixed", np.ones((100, 1)))])
    fit = fit_gaussian_approx(LatentModel([FixedEffects(["b0"])], [blk], []), [])
    assert abs(fit.mode[0]) < 1e-10


@pytest.mark.parametrize("seed", [0, 1])
def test_conjugate_equivalence_iid(seed):
    rng = np.random.default_rng(seed)
    n, p, q = 150, 3, 20
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    grp = rng.integers(0, q, n)
    M = sp.csr_matrix((np.ones(n), (np.arange(n), grp)), shape=(n, q))
    y = X @ [1.0, -0.5, 0.3] + rng.normal(0, 0.7, q)[grp] + rng.normal(0, 0.5, n)
    m = gaussian_model(y, X, log_tau=np.log(4.0), extra=(IID("u", q, "tau_u"), M),
                       extra_hypers=[precision_hyper("tau_u", np.log(2.0))])
    theta = m.theta0()
    fit = fit_gaussian_approx(m, theta)
    mean, H, Q, A, tau = dense_posterior(m, theta)
    np.testing.assert_allclose(fit.mode, mean, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(fit.H.toarray(), H, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(fit.marginal_var(), np.diag(np.linalg.inv(H)), rtol=1e-9)
    # Laplace evidence is the exact marginal likelihood for a Gaussian model
    S = A @ np.linalg.solve(Q, A.T) + np.eye(n) / tau
    exact = multivariate_normal(A @ m.m0, S).logpdf(y)
    assert fit.log_evidence == pytest.approx(exact, rel=1e-9)


def test_conjugate_equivalence_constrained():
    rng = np.random.default_rng(5)
    g = AdjacencyGraph.from_pairs([(i, i + 1) for i in range(11)] + [(0, 5), (3, 9)], 12)
    n = 120
    area = np.arange(n) % 12
    M = sp.csr_matrix((np.ones(n), (np.arange(n), area)), shape=(n, 12))
    y = 0.4 + rng.normal(0, 1, 12)[area] + rng.normal(0, 0.5, n)
    m = gaussian_model(y, np.ones((n, 1)), log_tau=np.log(4.0), extra=(Besag("s", g, "tau_s"), M),
                       extra_hypers=[precision_hyper("tau_s", 0.0)])
    fit = fit_gaussian_approx(m, m.theta0())
    s = m.slices["s"]
    assert abs(fit.mode[s].mean()) < 1e-8
    # dense oracle: condition the Gaussian posterior on the zero sum
    h = m.natural(m.theta0())
    Q = m.prior_precision(h)[0].toarray()
    A = m.A(h).toarray()
    H = Q + 4.0 * A.T @ A
    C = np.zeros((1, m.N))
    C[0, s] = 1.0
    # H is singular only along the constant mode of the Besag block, which is
    # pinned by the constraint; add C^T C to make it solvable
    Ht = H + C.T @ C
    Sig = np.linalg.inv(Ht)
    mu0 = Sig @ (Q @ m.m0 + 4.0 * A.T @ y)
    K = Sig @ C.T @ np.linalg.inv(C @ Sig @ C.T)
    mean = mu0 - K @ (C @ mu0)
    Sc = Sig - K @ C @ Sig
    np.testing.assert_allclose(fit.mode, mean, atol=1e-9)
    np.testing.assert_allclose(fit.covariance(), Sc, atol=1e-9)
    draws = fit.sample(np.random.default_rng(0), 5)
    np.testing.assert_allclose(draws[s].sum(axis=0), 0.0, atol=1e-8)


# ---------------------------------------------------------------------------
# hyperparameters
# ---------------------------------------------------------------------------

def _tau_model(y):
    blk = LikelihoodBlock("y", Gaussian(prec_hyper="tau"), y, [Component("fixed", np.ones((y.size, 1)))])
    return LatentModel([FixedEffects(["b0"])], [blk], [precision_hyper("tau")])


def test_grid_weights():
    y = np.random.default_rng(0).normal(1.0, 0.5, 50)
    m = _tau_model(y)
    s = optimize_hyperparameters(m, strategy="grid", grid=[[1.0]])
    np.testing.assert_array_equal(s.weights, [1.0])
    s = optimize_hyperparameters(m, strategy="grid", grid=[[1.0], [1.0]])
    np.testing.assert_allclose(s.weights, [0.5, 0.5], atol=1e-15)
    s = optimize_hyperparameters(m, strategy="grid", grid=[[0.0], [1.0], [2.0]])
    assert s.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(s.sd >= 0)


def test_tau_recovery():
    y = np.random.default_rng(1).normal(0.7, 0.5, 500)
    s = optimize_hyperparameters(_tau_model(y))
    assert abs(s.theta_mode[0] - np.log(4.0)) < 0.3
    assert s.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert len(s.fits) == 3
    rows = s.fixed_table()
    name, mean, sd, lo, med, hi = rows[0]
    assert lo < med < hi
    assert med == pytest.approx(mean, abs=1e-3 * sd)


# ---------------------------------------------------------------------------
# WAIC
# ---------------------------------------------------------------------------

def test_waic_needs_draws():
    with pytest.raises(InsufficientDraws):
        waic_from_loglik(np.zeros((10, 3)))
    y = np.zeros(5)
    s = optimize_hyperparameters(gaussian_model(y, np.ones((5, 1))), strategy="ascent")
    with pytest.raises(InsufficientDraws):
        waic(s, n_draws=20)


def test_waic_degenerate_posterior():
    y = np.random.default_rng(2).normal(0.3, 1.0, 30)
    m = gaussian_model(y, np.ones((30, 1)), prec=1e14)
    s = optimize_hyperparameters(m, strategy="ascent")
    res = waic(s, details=True)
    assert res.p_waic < 1e-10
    ref = -2.0 * norm.logpdf(y, s.mean[0], 1.0).sum()
    assert res.waic == pytest.approx(ref, abs=1e-6)


def test_waic_matches_analytic():
    n = 20
    y = np.random.default_rng(3).normal(0.5, 1.0, n)
    s = optimize_hyperparameters(gaussian_model(y, np.ones((n, 1))), strategy="ascent")
    m_post, v_post = s.mean[0], s.sd[0] ** 2
    assert v_post == pytest.approx(1.0 / (n + 0.001), rel=1e-10)
    lppd = norm.logpdf(y, m_post, np.sqrt(1.0 + v_post)).sum()
    d = y - m_post
    p_waic = np.sum(d * d * v_post + 0.5 * v_post**2)
    exact = -2.0 * (lppd - p_waic)
    vals = np.array([waic(s, seed=k) for k in range(30)])
    assert abs(vals[0] - exact) < 3.0 * vals.std(ddof=1)
    assert abs(vals.mean() - exact) < 3.0 * vals.std(ddof=1) / np.sqrt(30) + 0.05


def test_waic_null_covariate():
    deltas = []
    for r in range(20):
        rng = np.random.default_rng(100 + r)
        n = 200
        x = rng.normal(size=n)
        y = 1.0 + rng.normal(size=n)
        base = optimize_hyperparameters(gaussian_model(y, np.ones((n, 1))), strategy="ascent")
        big = optimize_hyperparameters(gaussian_model(y, np.column_stack([np.ones(n), x])), strategy="ascent")
        deltas.append(waic(big, seed=r) - waic(base, seed=r))
    assert np.median(deltas) >= 0


# ---------------------------------------------------------------------------
# stepwise
# ---------------------------------------------------------------------------

def _additive_score(gains, cost=2.0):
    return lambda sel: 100.0 - sum(gains[c] for c in sel) + cost * len(sel)


def test_stepwise_single_candidate():
    res = stepwise_search(_additive_score({"x": 10.0}), ["x"], margin=0.0)
    assert res.selected == ("x",)
    assert [t[0] for t in res.trace] == ["start", "add"]


def test_stepwise_selects_true_and_tie_break():
    gains = {"a": 0.0, "b": 30.0, "c": 1.0, "d": 30.0}
    res = stepwise_search(_additive_score(gains), list(gains))
    assert res.selected == ("b", "d")
    # equal improvements enter in candidate order
    assert [t[1] for t in res.trace[1:]] == ["b", "d"]


def test_stepwise_backward_step():
    # a enters first but becomes redundant once b and c are in
    def score(sel):
        s = set(sel)
        w = 100.0
        if "a" in s:
            w -= 20.0 if not ({"b", "c"} <= s) else -0.5
        w -= 15.0 * ("b" in s) + 15.0 * ("c" in s)
        if {"b", "c"} <= s:
            w -= 10.0
        return w

    res = stepwise_search(score, ["a", "b", "c"])
    assert set(res.selected) == {"b", "c"}
    assert ("remove", "a") in [(t[0], t[1]) for t in res.trace]


def test_stepwise_standard_error_rule():
    # "n" lowers WAIC by 3 through a few large pointwise gains: within one se
    base = np.zeros(100)
    noisy = base.copy()
    noisy[:4] = [-4.0, -4.0, 2.5, 2.5]
    true = base - 0.5
    table = {(): base, ("n",): noisy, ("t",): true, ("n", "t"): noisy + true - base}
    score = lambda sel: WaicResult(float(table[sel].sum()), 0.0, 0.0, table[sel])
    assert difference_se(noisy, base) == pytest.approx(np.sqrt(100 * np.var(noisy)))
    assert stepwise_search(score, ["n", "t"]).selected == ("t",)
    # without the se term the plain rule admits both
    assert stepwise_search(score, ["n", "t"], se_factor=0.0).selected == ("n", "t")


def test_correlation_prefilter():
    rng = np.random.default_rng(4)
    a = rng.normal(size=500)
    b = 0.9 * a + np.sqrt(1 - 0.81) * rng.normal(size=500)
    c = rng.normal(size=500)
    kept, removed = correlation_prefilter({"a": a, "b": b, "c": c})
    assert kept == ["a", "c"]
    assert removed[0][:2] == ("b", "a") and abs(removed[0][2]) > 0.75
    kept, _ = correlation_prefilter({"a": a, "nb": -b, "c": c})
    assert kept == ["a", "c"]
    res = stepwise_search(_additive_score({"a": 5.0, "b": 50.0, "c": 0.0}), ["a", "b", "c"], columns={"a": a, "b": b, "c": c})
    assert "b" not in res.selected and res.prefiltered[0][0] == "b"


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def test_simulate_bernoulli():
    n = 10_000
    blk = LikelihoodBlock("z", Bernoulli(), np.zeros(n), [Component("fixed", sp.csr_matrix(np.ones((n, 1))))])
    m = LatentModel([FixedEffects(["b0"])], [blk], [])
    y, z = simulate(m, [], seed=7, fixed={"b0": 0.0})
    assert abs((y["z"] == 0).mean() - 0.5) < 0.02
    y2, _ = simulate(m, [], seed=7, fixed={"b0": 0.0})
    np.testing.assert_array_equal(y["z"], y2["z"])


def test_simulate_beta_concentrates():
    n = 5000
    blk = LikelihoodBlock("y", Beta(), np.full(n, 0.5), [Component("fixed", sp.csr_matrix(np.ones((n, 1))))])
    m = LatentModel([FixedEffects(["b0"])], [blk], [precision_hyper("phi", np.log(1e4))])
    y, _ = simulate(m, m.theta0(), seed=1, fixed={"b0": 0.4})
    mu = 1.0 / (1.0 + np.exp(-0.4))
    assert abs(y["y"].mean() - mu) < 0.001
    assert y["y"].std() < 0.01
    assert y["y"].std() == pytest.approx(np.sqrt(mu * (1 - mu) / (1 + 1e4)), rel=0.05)


def test_simulate_constrained_latent():
    g = AdjacencyGraph.from_pairs([(i, i + 1) for i in range(9)], 10)
    m = gaussian_model(np.zeros(10), np.ones((10, 1)), extra=(Besag("s", g, "tau_s"), sp.identity(10)),
                       extra_hypers=[precision_hyper("tau_s")])
    _, z = simulate(m, m.theta0(), seed=3)
    assert abs(z[m.slices["s"]].sum()) < 1e-10
