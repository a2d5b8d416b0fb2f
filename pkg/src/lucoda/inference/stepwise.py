"""WAIC-driven stepwise covariate selection with a correlation prefilter.

The search alternates (i) forward steps until no covariate can be added and
(ii) backward steps until none can be removed, repeating both until the
selection no longer changes. When the score returns pointwise WAIC
contributions, a move must also beat the standard error of the WAIC
difference, computed from the pointwise differences.
"""
from dataclasses import dataclass, field

import numpy as np

DEFAULT_MARGIN = 0.0
DEFAULT_SE_FACTOR = 1.0


def correlation_prefilter(columns, threshold=0.75):
    """Drop the later member of every pair with ``|corr| > threshold``.

    Parameters
    ----------
    columns : dict of name -> 1-D array
        Candidates in priority order.

    Returns
    -------
    kept : list of str
    removed : list of (removed, kept_partner, corr)
    """
    names = list(columns)
    kept, removed = [], []
    for nm in names:
        x = np.asarray(columns[nm], dtype=float)
        clash = None
        for k in kept:
            r = np.corrcoef(x, np.asarray(columns[k], dtype=float))[0, 1]
            if abs(r) > threshold:
                clash = (nm, k, float(r))
                break
        if clash is None:
            kept.append(nm)
        else:
            removed.append(clash)
    return kept, removed


@dataclass
class StepwiseResult:
    selected: tuple
    waic: float
    trace: list = field(default_factory=list)
    prefiltered: list = field(default_factory=list)
    evaluations: int = 0


def _unpack(value):
    pointwise = getattr(value, "pointwise", None)
    w = value.waic if hasattr(value, "waic") else value
    return float(w), None if pointwise is None else np.asarray(pointwise, dtype=float)


def difference_se(a, b):
    """Standard error of ``sum(a - b)`` from pointwise contributions."""
    if a is None or b is None:
        return 0.0
    d = a - b
    return float(np.sqrt(d.size * np.var(d)))


def stepwise_search(score, candidates, base=(), columns=None, correlation_threshold=0.75,
                    margin=DEFAULT_MARGIN, se_factor=DEFAULT_SE_FACTOR, max_rounds=20):
    """Forward/backward search minimising ``score(selection)``.

    Parameters
    ----------
    score : callable
        Maps a tuple of covariate names (in candidate order) to a WAIC, either
        a float or an object with ``waic`` and ``pointwise`` attributes
        (:class:`WaicResult`).
    candidates : sequence of str
        Candidate covariates; order breaks ties.
    base : sequence of str
        Covariates always included.
    columns : dict, optional
        Covariate values used by the correlation prefilter.
    margin, se_factor : float
        A covariate enters only if WAIC drops by more than
        ``margin + se_factor * se`` and is removed whenever removal raises
        WAIC by less than that, where ``se`` is the standard error of the
        WAIC difference (zero for float scores). With float scores and
        ``margin=0`` this is the plain rule.

    Returns
    -------
    StepwiseResult
    """
    order = list(candidates)
    prefiltered = []
    if columns is not None:
        kept, prefiltered = correlation_prefilter({c: columns[c] for c in order}, correlation_threshold)
        order = kept
    rank = {c: i for i, c in enumerate(order)}
    memo = {}

    def key(sel):
        return tuple(sorted(sel, key=rank.__getitem__))

    def evaluate(sel):
        k = key(sel)
        if k not in memo:
            memo[k] = _unpack(score(tuple(base) + k))
        return memo[k]

    def threshold(new, old):
        return margin + se_factor * difference_se(new[1], old[1])

    current = ()
    cur_res = evaluate(current)
    cur = cur_res[0]
    trace = [("start", None, cur)]
    for _ in range(max_rounds):
        changed = False
        while True:  # forward
            pool = [c for c in order if c not in current]
            if not pool:
                break
            vals = [(evaluate(current + (c,))[0], rank[c], c) for c in pool]
            w, _, c = min(vals)
            new = evaluate(current + (c,))
            if w < cur - threshold(new, cur_res):
                current = key(current + (c,))
                cur, cur_res = w, new
                trace.append(("add", c, w))
                changed = True
            else:
                break
        while current:  # backward
            vals = [(evaluate(tuple(x for x in current if x != c))[0], rank[c], c) for c in current]
            w, _, c = min(vals)
            new = evaluate(tuple(x for x in current if x != c))
            if w < cur + threshold(new, cur_res):
                current = tuple(x for x in current if x != c)
                cur, cur_res = w, new
                trace.append(("remove", c, w))
                changed = True
            else:
                break
        if not changed:
            break
    return StepwiseResult(tuple(base) + current, cur, trace, prefiltered, len(memo))
