"""Poisson log-linear mortality model with population offset and lag-1 predictors.

Weekly death counts follow

    Y_t ~ Poisson(lambda_t)
    log lambda_t = log(offset_t) + b0 + b1 * Temp_{t-1} + b2 * X_{t-1}
                   + sum_j b_j * log(C_{j,t-1})

where X is the latent log concentration of the one measurement-error
pollutant (absent in the plug-in-only variant) and the C_j are observed
covariate pollutants entering through their logs.  Predictors are always
read one week behind the outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .dataset import WeeklyDataset
from .errors import DomainError, SimulationScaleError, ValidationError

MAX_LOG_INTENSITY = 700.0  # exp() overflow guard for simulation


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters for the joint model.

    `coefficient_scale` is the 0.1 in N(0, 0.1); with `scale_is_variance`
    it is a variance (sd ~ 0.316), otherwise a precision (variance 10).
    The intercept gets its own wide normal prior: it encodes a baseline
    rate, not a small predictor effect.
    """

    coefficient_scale: float = 0.1
    scale_is_variance: bool = True
    intercept_variance: float = 100.0
    mu_scale: float = 0.1
    phi_low: float = 0.0
    phi_high: float = 1.0
    sigma_low: float = 0.0
    sigma_high: float = 20.0
    seasonal_amplitude_variance: float = 1.0
    seasonal_shape_variance: float = 1.0
    phase_half_range: float = 26.0

    def __post_init__(self):
        for name in ("coefficient_scale", "intercept_variance", "mu_scale",
                     "seasonal_amplitude_variance", "seasonal_shape_variance",
                     "phase_half_range"):
            if not (getattr(self, name) > 0):
                raise ValidationError(f"{name} must be positive")
        if not (self.phi_low < self.phi_high and self.sigma_low < self.sigma_high):
            raise ValidationError("uniform prior bounds must be ordered")

    @property
    def coefficient_variance(self) -> float:
        return self.coefficient_scale if self.scale_is_variance else 1.0 / self.coefficient_scale

    @property
    def mu_variance(self) -> float:
        return self.mu_scale if self.scale_is_variance else 1.0 / self.mu_scale


@dataclass(frozen=True)
class OutcomeSpec:
    """Which series drive one mortality fit.

    `me_pollutant` names the single predictor treated as a noisy proxy for
    a latent exposure; `covariates` enter as logs of their observed values.
    """

    cause: str
    me_pollutant: str | None = None
    covariates: tuple[str, ...] = ()
    include_temperature: bool = True
    lag: int = 1
    priors: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.lag != 1:
            raise ValidationError("only a one-week predictor lag is supported")
        if len(set(self.covariates)) != len(self.covariates):
            raise ValidationError("duplicate covariate names")
        if self.me_pollutant is not None and self.me_pollutant in self.covariates:
            raise ValidationError(
                f"{self.me_pollutant} cannot be both the measurement-error predictor and a covariate"
            )


@dataclass(frozen=True)
class LinearPredictorParams:
    """Coefficients of the log-intensity; absent terms are None/empty."""

    intercept: float
    temperature: float | None = None
    latent: float | None = None
    covariates: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(float(b) for b in self.covariates))
        vals = [self.intercept, *self.covariates]
        vals += [v for v in (self.temperature, self.latent) if v is not None]
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("coefficients must be finite")


def log_intensity(
    params: LinearPredictorParams,
    temperature_lag: float | None,
    covariates_lag: Sequence[float],
    latent_lag: float | None,
    offset: float,
) -> float:
    """log lambda_t from last week's predictors and this week's offset."""
    if not (offset > 0):
        raise DomainError(f"offset must be positive, got {offset}")
    if len(covariates_lag) != len(params.covariates):
        raise ValidationError(
            f"got {len(covariates_lag)} covariate values for {len(params.covariates)} coefficients"
        )
    out = math.log(offset) + params.intercept
    if params.temperature is not None:
        if temperature_lag is None:
            raise ValidationError("model includes temperature but no value was given")
        out += params.temperature * temperature_lag
    if params.latent is not None:
        if latent_lag is None:
            raise ValidationError("model includes a latent predictor but no value was given")
        out += params.latent * latent_lag
    for b, c in zip(params.covariates, covariates_lag):
        if not (c > 0):
            raise DomainError(f"covariate value must be positive before logging, got {c}")
        out += b * math.log(c)
    return out


def poisson_loglik_pointwise(y: int, log_lambda: float) -> float:
    """log Poisson(y | exp(log_lambda)) including the y! normalizer."""
    if y < 0 or y != int(y):
        raise DomainError(f"count must be a nonnegative integer, got {y}")
    if not math.isfinite(log_lambda):
        raise DomainError(f"log intensity must be finite, got {log_lambda}")
    return y * log_lambda - math.exp(log_lambda) - float(gammaln(y + 1))


def poisson_loglik_series(y: np.ndarray, log_lambda: np.ndarray) -> np.ndarray:
    """Vectorized pointwise Poisson log density (one entry per outcome week)."""
    y = np.asarray(y, dtype=float)
    return y * log_lambda - np.exp(log_lambda) - gammaln(y + 1.0)


# ---------------------------------------------------------------------------
# design frame: aligned arrays for the sampler
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignFrame:
    """Lag-aligned arrays for one outcome fit over weeks t = 2..N.

    Index i of the outcome arrays is week i+2; lagged predictor arrays hold
    the week-(i+1) values, so row i pairs an outcome with the previous
    week's exposures by construction.
    """

    counts: np.ndarray
    log_offset: np.ndarray
    temperature_lag: np.ndarray | None
    log_covariates_lag: np.ndarray
    covariate_names: tuple[str, ...]
    me_log_observed: np.ndarray | None
    me_valid_days: np.ndarray | None
    n_weeks: int

    @property
    def n_points(self) -> int:
        return self.counts.size


def build_design(dataset: WeeklyDataset, spec: OutcomeSpec) -> DesignFrame:
    if spec.cause not in dataset.causes:
        raise ValidationError(f"cause {spec.cause!r} not in dataset (has {dataset.causes})")
    for name in spec.covariates:
        if name not in dataset.pollutants:
            raise ValidationError(f"covariate {name!r} not in dataset (has {dataset.pollutants})")
    deaths = dataset.deaths_for(spec.cause)
    offsets = dataset.offsets()
    temp = dataset.temperature_centered()

    cov_cols = []
    for name in spec.covariates:
        level = dataset.pollutant(name)
        if np.any(level <= 0):
            raise DomainError(f"covariate {name!r} has nonpositive values; cannot take logs")
        cov_cols.append(np.log(level[:-1]))
    log_cov = np.column_stack(cov_cols) if cov_cols else np.empty((dataset.n_weeks - 1, 0))

    me_w = me_n = None
    if spec.me_pollutant is not None:
        if spec.me_pollutant not in dataset.pollutants:
            raise ValidationError(f"pollutant {spec.me_pollutant!r} not in dataset")
        level = dataset.pollutant(spec.me_pollutant)
        if np.any(level <= 0):
            raise DomainError(f"{spec.me_pollutant!r} has nonpositive values; cannot take logs")
        me_n = dataset.valid_days(spec.me_pollutant)
        if np.any(me_n < 1):
            raise ValidationError(
                f"{spec.me_pollutant!r} must have at least one valid day in every week"
            )
        me_w = np.log(level)

    return DesignFrame(
        counts=deaths[1:],
        log_offset=np.log(offsets[1:]),
        temperature_lag=temp[:-1] if spec.include_temperature else None,
        log_covariates_lag=log_cov,
        covariate_names=spec.covariates,
        me_log_observed=me_w,
        me_valid_days=me_n,
        n_weeks=dataset.n_weeks,
    )


def intensity_series(
    params: LinearPredictorParams,
    frame: DesignFrame,
    latent: np.ndarray | None = None,
) -> np.ndarray:
    """log lambda for weeks 2..N given a latent path over weeks 1..N."""
    eta = frame.log_offset + params.intercept
    if params.temperature is not None:
        eta = eta + params.temperature * frame.temperature_lag
    if params.covariates:
        eta = eta + frame.log_covariates_lag @ np.asarray(params.covariates)
    if params.latent is not None:
        if latent is None:
            raise ValidationError("latent coefficient set but no latent path given")
        eta = eta + params.latent * np.asarray(latent)[:-1]
    return eta


def simulate_outcome(
    params: LinearPredictorParams,
    temperature: np.ndarray | None,
    covariates: np.ndarray,
    latent: np.ndarray,
    offsets: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw counts for weeks 2..T from the intensity implied by week-(t-1) predictors.

    `covariates` is (T, k) on the concentration scale; `latent` is the
    log-scale path of length T.  Raises if any log intensity exceeds the
    overflow guard, naming the first offending week.
    """
    latent = np.asarray(latent, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    T = latent.size
    covariates = np.asarray(covariates, dtype=float).reshape(T, -1)
    if covariates.shape[1] != len(params.covariates):
        raise ValidationError("covariate matrix width does not match coefficient count")
    if np.any(offsets <= 0):
        raise DomainError("offsets must be positive")
    eta = np.log(offsets[1:]) + params.intercept
    if params.temperature is not None:
        eta = eta + params.temperature * np.asarray(temperature, dtype=float)[:-1]
    if params.covariates:
        if np.any(covariates <= 0):
            raise DomainError("covariates must be positive before logging")
        eta = eta + np.log(covariates[:-1]) @ np.asarray(params.covariates)
    if params.latent is not None:
        eta = eta + params.latent * latent[:-1]
    too_big = np.nonzero(eta > MAX_LOG_INTENSITY)[0]
    if too_big.size:
        t = int(too_big[0]) + 2
        raise SimulationScaleError(
            f"log intensity {eta[too_big[0]]:.1f} exceeds {MAX_LOG_INTENSITY}", t=t
        )
    return rng.poisson(np.exp(eta))
