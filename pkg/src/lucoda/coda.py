"""Compositional data: closure, log-ratio transforms, Dirichlet density and
zero patterns.

Indices of parts are zero-based throughout the Python API.
"""
from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy.special import gammaln

from .errors import (
    AllZeroRow,
    ClosureViolation,
    CompositionError,
    EmptySubcomposition,
    NegativeEntry,
    NotCentered,
    ZeroPart,
)

CLOSURE_TOL = 1e-10
ZERO_SNAP = 1e-12
CENTER_TOL = 1e-8


def _labels(D, labels):
    if labels is None:
        return tuple(f"part{i + 1}" for i in range(D))
    labels = tuple(str(s) for s in labels)
    if len(labels) != D:
        raise CompositionError(f"expected {D} labels, got {len(labels)}")
    return labels


@dataclass(frozen=True)
class Composition:
    """A single closed composition (parts sum to one)."""

    parts: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        p = np.asarray(self.parts, dtype=float).ravel()
        if p.size < 2:
            raise CompositionError("a composition needs at least two parts")
        if np.any(p < 0):
            raise NegativeEntry("composition parts must be nonnegative")
        if abs(p.sum() - 1.0) > CLOSURE_TOL:
            raise CompositionError(f"parts sum to {p.sum():.15g}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "parts", p)
        object.__setattr__(self, "labels", _labels(p.size, self.labels))

    @property
    def D(self):
        return self.parts.size

    def __len__(self):
        return self.parts.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.parts, dtype=dtype)


@dataclass(frozen=True)
class CompositionMatrix:
    """``n x D`` table of compositions sharing part labels.

    Values with magnitude below :data:`ZERO_SNAP` are snapped to exactly zero
    on construction; rows off closure by more than :data:`CLOSURE_TOL` are
    renormalised and flagged in :attr:`renormalized`.
    """

    values: np.ndarray
    labels: tuple = None
    renormalized: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        Y = np.array(self.values, dtype=float, ndmin=2)
        if Y.shape[1] < 2:
            raise CompositionError("a composition needs at least two parts")
        Y[np.abs(Y) < ZERO_SNAP] = 0.0
        if np.any(Y < 0):
            raise NegativeEntry("composition parts must be nonnegative")
        s = Y.sum(axis=1)
        if np.any(s == 0):
            raise AllZeroRow(f"all-zero rows: {np.nonzero(s == 0)[0].tolist()}")
        off = np.abs(s - 1.0) > CLOSURE_TOL
        if off.any():
            Y[off] /= s[off, None]
        Y.setflags(write=False)
        object.__setattr__(self, "values", Y)
        object.__setattr__(self, "labels", _labels(Y.shape[1], self.labels))
        object.__setattr__(self, "renormalized", off)

    @classmethod
    def from_rows(cls, rows, labels=None, max_closure_error=None):
        """Build from raw rows; optionally reject rows whose sum is off by more
        than ``max_closure_error`` (row-indexed :class:`ClosureViolation`)."""
        Y = np.array(rows, dtype=float, ndmin=2)
        if max_closure_error is not None:
            bad = np.nonzero(np.abs(Y.sum(axis=1) - 1.0) > max_closure_error)[0]
            if bad.size:
                raise ClosureViolation(bad.tolist())
        return cls(Y, labels)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def D(self):
        return self.values.shape[1]

    def row(self, i):
        return Composition(self.values[i], self.labels)

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class LogratioMatrix:
    """Log-ratio coordinates of a set of compositions.

    ``kind`` is ``"alr"`` (with zero-based ``reference``) or ``"clr"``.
    """

    values: np.ndarray
    kind: str
    reference: int = None
    source_labels: tuple = None

    def __post_init__(self):
        V = np.array(self.values, dtype=float, ndmin=2)
        kind = self.kind.lower()
        if kind not in ("alr", "clr"):
            raise CompositionError(f"unknown log-ratio kind {self.kind!r}")
        D = V.shape[1] + 1 if kind == "alr" else V.shape[1]
        if kind == "clr" and np.any(np.abs(V.sum(axis=1)) > 1e-10 * max(1.0, np.abs(V).max())):
            raise NotCentered("CLR rows must sum to zero")
        if kind == "alr" and (self.reference is None or not 0 <= self.reference < D):
            raise CompositionError("ALR needs a reference index in range")
        V.setflags(write=False)
        object.__setattr__(self, "values", V)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "source_labels", _labels(D, self.source_labels))

    @property
    def n(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class DirichletParams:
    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).ravel()
        if a.size < 2 or np.any(~np.isfinite(a)) or np.any(a <= 0):
            raise CompositionError("Dirichlet shapes must be finite and positive (D >= 2)")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def alpha0(self):
        return float(self.alpha.sum())


@dataclass(frozen=True)
class IncidenceMatrix:
    """Binary zero pattern of a :class:`CompositionMatrix` (1 = nonzero)."""

    entries: np.ndarray

    @property
    def n(self):
        return self.entries.shape[0]


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _parts(y):
    return np.asarray(y.parts if isinstance(y, Composition) else y, dtype=float)


def close(raw, labels=None):
    """Renormalise a nonnegative vector to unit sum."""
    x = np.asarray(raw, dtype=float).ravel()
    if x.size < 2:
        raise CompositionError("a composition needs at least two parts")
    if np.any(x < 0):
        raise NegativeEntry("negative entries cannot be closed")
    s = x.sum()
    if s == 0:
        raise AllZeroRow("cannot close an all-zero vector")
    return Composition(x / s, labels)


def _require_positive(p):
    if np.any(p <= 0):
        raise ZeroPart("log-ratios are undefined for zero parts; route the row through the Hurdle model")


def alr(y, r):
    """Additive log-ratio of ``y`` against reference part ``r`` (length D-1)."""
    p = _parts(y)
    if not 0 <= r < p.size:
        raise CompositionError(f"reference index {r} out of range for D={p.size}")
    _require_positive(p)
    lp = np.log(p)
    return np.delete(lp - lp[r], r)


def clr(y):
    """Centred log-ratio: log of each part over the geometric mean."""
    p = _parts(y)
    _require_positive(p)
    lp = np.log(p)
    return lp - lp.mean()


def _softmax(v):
    v = np.asarray(v, dtype=float)
    e = np.exp(v - v.max())
    return e / e.sum()


def inv_alr(v, r, labels=None):
    """Inverse ALR: insert 0 at position ``r`` and apply softmax."""
    v = np.asarray(v, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise CompositionError("log-ratios must be finite")
    if not 0 <= r <= v.size:
        raise CompositionError(f"reference index {r} out of range for D={v.size + 1}")
    return Composition(_softmax(np.insert(v, r, 0.0)), labels)


def inv_clr(v, labels=None):
    """Inverse CLR (softmax); rows must be centred to within 1e-8."""
    v = np.asarray(v, dtype=float).ravel()
    if abs(v.sum()) > CENTER_TOL:
        raise NotCentered(f"CLR vector sums to {v.sum():.3g}")
    return Composition(_softmax(v - v.mean()), labels)


def alr_matrix(Y, r):
    Y = Y if isinstance(Y, CompositionMatrix) else CompositionMatrix(Y)
    V = Y.values
    _require_positive(V)
    L = np.log(V)
    return LogratioMatrix(np.delete(L - L[:, [r]], r, axis=1), "alr", r, Y.labels)


def clr_matrix(Y):
    Y = Y if isinstance(Y, CompositionMatrix) else CompositionMatrix(Y)
    V = Y.values
    _require_positive(V)
    L = np.log(V)
    return LogratioMatrix(L - L.mean(axis=1, keepdims=True), "clr", None, Y.labels)


def incidence(Y):
    """Exact zero pattern: entry 0 iff the composition value is 0."""
    V = Y.values if isinstance(Y, CompositionMatrix) else np.atleast_2d(np.asarray(Y, dtype=float))
    return IncidenceMatrix((V != 0).astype(np.int8))


def reclose_subcomposition(y, keep):
    """Restrict to parts ``keep`` and re-close them."""
    p = _parts(y)
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise EmptySubcomposition("no parts kept")
    sub = p[keep]
    if np.any(sub <= 0):
        raise ZeroPart("kept parts must be strictly positive")
    labels = None
    if isinstance(y, Composition):
        labels = tuple(y.labels[k] for k in keep)
    if len(keep) == 1:
        raise CompositionError("a single-part subcomposition carries no log-ratio information")
    return Composition(sub / sub.sum(), labels)


def dirichlet_logpdf(y, p):
    """Log density of the Dirichlet distribution at an interior composition."""
    x = _parts(y)
    a = p.alpha if isinstance(p, DirichletParams) else DirichletParams(p).alpha
    if x.size != a.size:
        raise CompositionError("dimension mismatch between y and alpha")
    _require_positive(x)
    log_beta = np.sum(gammaln(a)) - gammaln(a.sum())
    return float(np.sum((a - 1.0) * np.log(x)) - log_beta)


def dirichlet_mean(p):
    a = p.alpha if isinstance(p, DirichletParams) else DirichletParams(p).alpha
    return Composition(a / a.sum())


def warn_renormalized(Y):
    if Y.renormalized is not None and Y.renormalized.any():
        warnings.warn(
            f"{int(Y.renormalized.sum())} row(s) renormalised to satisfy closure",
            stacklevel=2,
        )
