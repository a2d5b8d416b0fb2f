"""Hyperparameters on an unbounded internal scale."""
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logit

TRANSFORMS = ("log", "logit01", "logit11", "identity")


@dataclass(frozen=True)
class Hyper:
    """A hyperparameter.

    Parameters
    ----------
    name : str
    init : float
        Starting value on the internal scale.
    transform : str
        ``log`` for precisions and scales, ``logit01`` for parameters in
        (0, 1), ``logit11`` for correlations in (-1, 1), ``identity`` for
        unbounded scaling parameters.
    lower, upper : float
        Bounds on the internal scale.
    fixed : bool
        Keep at ``init`` during optimisation.
    prior : tuple of (mean, sd), optional
        Gaussian prior on the internal scale; flat within bounds otherwise.
    """

    name: str
    init: float = 0.0
    transform: str = "log"
    lower: float = -6.0
    upper: float = 10.0
    fixed: bool = False
    prior: tuple = None

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if not self.lower <= self.init <= self.upper:
            raise ValueError(f"{self.name}: init {self.init} outside [{self.lower}, {self.upper}]")

    def to_natural(self, x):
        if self.transform == "log":
            return float(np.exp(x))
        if self.transform == "logit01":
            return float(expit(x))
        if self.transform == "logit11":
            return float(2.0 * expit(x) - 1.0)
        return float(x)

    def to_internal(self, v):
        if self.transform == "log":
            return float(np.log(v))
        if self.transform == "logit01":
            return float(logit(v))
        if self.transform == "logit11":
            return float(logit((v + 1.0) / 2.0))
        return float(v)

    def log_prior(self, x):
        if self.prior is None:
            return 0.0
        m, s = self.prior
        return float(-0.5 * ((x - m) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi))

    def with_prior(self, mean, sd):
        return replace(self, prior=(float(mean), float(sd)))


def precision_hyper(name, init=0.0, **kw):
    return Hyper(name, init, "log", **kw)


def unit_hyper(name, value=0.5, **kw):
    kw.setdefault("lower", -8.0)
    kw.setdefault("upper", 8.0)
    return Hyper(name, float(logit(value)), "logit01", **kw)


def correlation_hyper(name, value=0.0, **kw):
    kw.setdefault("lower", -8.0)
    kw.setdefault("upper", 8.0)
    return Hyper(name, float(logit((value + 1.0) / 2.0)), "logit11", **kw)


def scale_hyper(name, value=1.0, **kw):
    kw.setdefault("lower", -10.0)
    kw.setdefault("upper", 10.0)
    return Hyper(name, float(value), "identity", **kw)
