"""Bayesian state-space modeling of weekly pollutant exposure and mortality counts."""

from .dataset import WeeklyDataset, WeeklyObservation, center_temperature
from .mmwr import MmwrWeek, mmwr_week_of
from .outcome import LinearPredictorParams, OutcomeSpec, PriorSpec
from .sampler import PosteriorDraws, SamplerConfig, diagnostics, fit, fit_series
from .statespace import Ar1Params, MeanStructure, ObservationNoise, StateSpaceSpec

__version__ = "0.1.0"

__all__ = [
    "Ar1Params",
    "LinearPredictorParams",
    "MeanStructure",
    "MmwrWeek",
    "ObservationNoise",
    "OutcomeSpec",
    "PosteriorDraws",
    "PriorSpec",
    "SamplerConfig",
    "StateSpaceSpec",
    "WeeklyDataset",
    "WeeklyObservation",
    "center_temperature",
    "diagnostics",
    "fit",
    "fit_series",
    "mmwr_week_of",
    "__version__",
]
