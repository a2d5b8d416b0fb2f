import numpy as np
import pytest
import scipy.sparse as sp

from lucoda.consensus import (
    PartitionModel,
    consensus_vs_full_report,
    merge_marginals,
    merge_random_effects,
    plan_partitions,
    sequential_fit,
)
from lucoda.errors import EmptyPartition, LayoutMismatch, UninformedElement
from lucoda.inference import IID, RW1, Component, FixedEffects, LatentModel, LikelihoodBlock, optimize_hyperparameters, precision_hyper
from lucoda.likelihood import Gaussian


def toy_data(seed=0, n=180, q=12):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    grp = rng.integers(0, q, n)
    t = np.arange(n) % 6
    y = X @ [0.5, -1.0] + rng.normal(0, 0.8, q)[grp] + np.sin(t) + rng.normal(0, 0.5, n)
    return X, grp, t, y


def build(X, grp, t, y, q=12, nt=6, with_time=True):
    """Fixed hyperparameters keep the model conjugate."""
    def model(idx):
        n = idx.size
        rows = np.arange(n)
        comps = [
            Component("fixed", sp.csr_matrix(X[idx])),
            Component("u", sp.csr_matrix((np.ones(n), (rows, grp[idx])), shape=(n, q))),
        ]
        terms = [FixedEffects(["b0", "b1"], 0.0, 0.01), IID("u", q, 1.5)]
        if with_time:
            comps.append(Component("time", sp.csr_matrix((np.ones(n), (rows, t[idx])), shape=(n, nt))))
            terms.append(RW1("time", nt, 2.0))
        blk = LikelihoodBlock("y", Gaussian(log_tau=np.log(4.0)), y[idx], comps)
        return LatentModel(terms, [blk], [])

    return model


@pytest.fixture(scope="module")
def toy():
    X, grp, t, y = toy_data()
    builder = build(X, grp, t, y)
    full = optimize_hyperparameters(builder(np.arange(y.size)), strategy="ascent")
    plan = plan_partitions(y.size, n_p=4)
    state = sequential_fit(builder, plan, strategy="ascent")
    return builder, full, plan, state


def test_plan_examples():
    knots = np.repeat(np.arange(600), 3)
    plan = plan_partitions(knots, "by-time-blocks", 6)
    per_block = [np.unique(knots[plan.indices(j)]).size for j in range(6)]
    assert per_block == [100] * 6
    # whole time slices stay together
    for k in range(600):
        assert np.unique(plan.assignment[knots == k]).size == 1
    with pytest.warns(UserWarning):
        plan_partitions(5, n_p=5)
    with pytest.raises(ValueError):
        plan_partitions(10, n_p=1)
    with pytest.raises(EmptyPartition):
        plan_partitions(3, n_p=4)
    plan = plan_partitions(["a", "b", "a", "c", "b"], "by-likelihood-group", 3)
    assert plan.assignment.tolist() == [0, 1, 0, 2, 1]
    assert sorted(np.concatenate([plan.indices(j) for j in range(3)]).tolist()) == list(range(5))


def test_fixed_only_sequential_is_exact():
    X, grp, t, y = toy_data(1)

    def builder(idx):
        blk = LikelihoodBlock("y", Gaussian(log_tau=np.log(4.0)), y[idx], [Component("fixed", X[idx])])
        return LatentModel([FixedEffects(["b0", "b1"], 0.0, 0.01)], [blk], [])

    full = optimize_hyperparameters(builder(np.arange(y.size)), strategy="ascent")
    state = sequential_fit(builder, plan_partitions(y.size, n_p=5), strategy="ascent")
    np.testing.assert_allclose(state.fixed_mean, full.mean, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(state.fixed_prec, full.mode_fit.H.toarray(), rtol=1e-9)
    merged = merge_random_effects(state)
    np.testing.assert_allclose(merged.fixed_mean, full.mean, rtol=1e-9, atol=1e-12)


def test_multivariate_merge_is_exact(toy):
    builder, full, plan, state = toy
    merged = merge_random_effects(state, "multivariate")
    np.testing.assert_allclose(merged.fixed_mean, full.mean[:2], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(merged.fixed_sd, full.sd[:2], rtol=1e-9)
    np.testing.assert_allclose(merged.mean, full.mean, atol=1e-6)
    np.testing.assert_allclose(merged.sd, full.sd, rtol=1e-6)
    rep = consensus_vs_full_report(merged, full)
    assert max(r[2] for r in rep.rows) < 1e-6
    assert merged.metadata["fixed_sequential_mean"].shape == (2,)


def test_marginal_merge_weights(toy):
    _, _, _, state = toy
    merged = merge_random_effects(state, "marginal")
    assert merged.metadata["weights"] == "precision"
    assert merged.weights
    for _, ids, w in merged.weights:
        assert np.all(w >= 0)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(merged.fixed_mean, state.fixed_mean)


def test_variance_never_increases_without_correction(toy):
    _, _, _, state = toy
    merged = merge_random_effects(state, "multivariate", prior_correction=False)
    smallest = np.min([st.summary.sd for st in state.stages], axis=0)
    assert np.all(merged.sd <= smallest * (1 + 1e-12))


def test_merge_marginals_example():
    m, v, w = merge_marginals([0.0, 2.0], [1.0, 1.0 / 3.0])
    assert m == pytest.approx(1.5)
    assert v == pytest.approx(0.25)
    np.testing.assert_allclose(w, [0.25, 0.75])


def _single_element_builder(y):
    def builder(idx):
        blk = LikelihoodBlock("y", Gaussian(log_tau=0.0), y[idx], [Component("u", np.ones((idx.size, 1)))])
        return LatentModel([IID("u", 1, 1.0)], [blk], [])

    return builder


def test_identical_partitions_product():
    y = np.array([1.0, 2.0, 1.0, 2.0])
    state = sequential_fit(_single_element_builder(y), plan_partitions(4, n_p=2), strategy="ascent")
    a, b = state.stages[0].summary, state.stages[1].summary
    np.testing.assert_allclose(a.mean, b.mean)
    merged = merge_random_effects(state, "multivariate", prior_correction=False)
    assert merged.mean[0] == pytest.approx(a.mean[0], rel=1e-12)
    assert merged.sd[0] == pytest.approx(a.sd[0] / np.sqrt(2.0), rel=1e-12)


def test_passthrough_and_uninformed():
    y = np.arange(6.0)
    layout = LatentModel([IID("u", 3, 1.0)], [], [])

    def builder(idx):
        k = int(idx[0] // 2)
        blk = LikelihoodBlock("y", Gaussian(log_tau=0.0), y[idx], [Component("u", np.ones((idx.size, 1)))])
        return PartitionModel(LatentModel([IID("u", 1, 1.0)], [blk], []), [k])

    plan = plan_partitions(6, n_p=3)
    state = sequential_fit(builder, plan, layout=layout, strategy="ascent")
    for mode in ("marginal", "multivariate"):
        merged = merge_random_effects(state, mode)
        for st in state.stages:
            g = st.latent_index[0]
            assert merged.mean[g] == pytest.approx(st.summary.mean[0], rel=1e-12)
            assert merged.sd[g] == pytest.approx(st.summary.sd[0], rel=1e-12)
    big = LatentModel([IID("u", 4, 1.0)], [], [])
    state = sequential_fit(builder, plan, layout=big, strategy="ascent")
    with pytest.raises(UninformedElement):
        merge_random_effects(state)


def test_report_identity_and_mismatch(toy):
    builder, full, _, state = toy
    merged = merge_random_effects(state)
    merged.mean = full.mean.copy()
    merged.hyper_mode = full.theta_mode.copy()
    rep = consensus_vs_full_report(merged, full)
    assert all(r[2] == 0 and r[3] == 0 for r in rep.rows)
    assert all(r[3] == 0 for r in rep.hyper_rows)
    X, grp, t, y = toy_data()
    other = optimize_hyperparameters(build(X, grp, t, y, with_time=False)(np.arange(y.size)), strategy="ascent")
    with pytest.raises(LayoutMismatch):
        consensus_vs_full_report(merged, other)


def test_deterministic(toy):
    builder, _, plan, state = toy
    again = sequential_fit(builder, plan, strategy="ascent")
    for mode in ("marginal", "multivariate"):
        a = merge_random_effects(state, mode)
        b = merge_random_effects(again, mode)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.sd, b.sd)


def test_hyperparameters_carried_forward():
    rng = np.random.default_rng(8)
    n = 400
    y = 1.0 + rng.normal(0, 0.5, n)
    def builder(idx):
        blk = LikelihoodBlock("y", Gaussian(prec_hyper="tau"), y[idx], [Component("fixed", np.ones((idx.size, 1)))])
        return LatentModel([FixedEffects(["b0"])], [blk], [precision_hyper("tau")])

    state = sequential_fit(builder, plan_partitions(n, n_p=4), strategy="ascent")
    assert state.stages[0].hyper_prior is None
    for prev, st in zip(state.stages[:-1], state.stages[1:]):
        m, s = st.hyper_prior["tau"]
        assert m == pytest.approx(prev.summary.theta_mode[0])
        assert st.model.hypers[0].prior == (m, s)
    # fixed-effect precision only grows
    precs = [np.linalg.inv(st.fixed_cov)[0, 0] for st in state.stages]
    assert np.all(np.diff(precs) > 0)
    assert abs(state.hyper_mode[0] - np.log(4.0)) < 0.2


def test_marginal_carrier_is_wider_than_conditional():
    # two coupled precisions: the marginal sd can only exceed the axis-wise one
    rng = np.random.default_rng(5)
    n, q = 240, 15
    grp = rng.integers(0, q, n)
    y = 0.3 + rng.normal(0, 0.7, q)[grp] + rng.normal(0, 0.6, n)
    def builder(idx):
        m = idx.size
        comps = [
            Component("fixed", np.ones((m, 1))),
            Component("u", sp.csr_matrix((np.ones(m), (np.arange(m), grp[idx])), shape=(m, q))),
        ]
        blk = LikelihoodBlock("y", Gaussian(prec_hyper="tau"), y[idx], comps)
        terms = [FixedEffects(["b0"]), IID("u", q, "tau_u")]
        return LatentModel(terms, [blk], [precision_hyper("tau"), precision_hyper("tau_u")])

    plan = plan_partitions(n, n_p=2)
    cond = sequential_fit(builder, plan, strategy="ascent", hyper_carrier="conditional")
    marg = sequential_fit(builder, plan, strategy="ascent", hyper_carrier="marginal")
    assert cond.metadata["hyper_carrier"].endswith("conditional")
    assert marg.metadata["hyper_carrier"].endswith("marginal")
    st_c, st_m = cond.stages[1], marg.stages[1]
    for name in ("tau", "tau_u"):
        assert st_m.hyper_prior[name][0] == pytest.approx(st_c.hyper_prior[name][0])
        assert st_m.hyper_prior[name][1] >= st_c.hyper_prior[name][1] * (1 - 1e-6)
