"""Latent Gaussian models fitted by a Gaussian approximation at the mode."""
from .hyper import Hyper, correlation_hyper, precision_hyper, scale_hyper, unit_hyper
from .laplace import LaplaceFit, fit_gaussian_approx
from .model import Component, LatentModel, LikelihoodBlock
from .optimize import PosteriorSummary, optimize_hyperparameters
from .simulate import beta_hurdle_draw, draw_latent, simulate
from .stepwise import StepwiseResult, correlation_prefilter, stepwise_search
from .terms import (
    AR1,
    IID,
    SPDE,
    Besag,
    Correlated,
    FixedEffects,
    Kron,
    Leroux,
    RW1,
    SLMError,
    Structured,
)
from .waic import WaicResult, waic

assemble = LatentModel

__all__ = [
    "AR1", "Besag", "Component", "Correlated", "FixedEffects", "Hyper", "IID", "Kron",
    "LaplaceFit", "LatentModel", "Leroux", "LikelihoodBlock", "PosteriorSummary", "RW1",
    "SLMError", "SPDE", "Structured", "StepwiseResult", "WaicResult", "assemble",
    "beta_hurdle_draw", "correlation_hyper", "correlation_prefilter", "draw_latent",
    "fit_gaussian_approx", "optimize_hyperparameters", "precision_hyper", "scale_hyper",
    "simulate", "stepwise_search", "unit_hyper", "waic",
]
