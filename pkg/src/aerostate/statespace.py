"""Latent AR(1) log-concentration process: exact Gaussian inference and simulation.

The latent series X_t follows an AR(1) recursion around a (possibly
seasonal) mean path mu_t,

    X_t = mu_t + phi * (X_{t-1} - mu_{t-1}) + e_t,   e_t ~ N(0, var_ar),

initialized from its stationary law N(mu_1, var_ar / (1 - phi^2)).  Observed
log concentrations are X_t plus Gaussian noise whose variance is either a
constant or scales inversely with the week's valid-day count.

The sequential kernels (filter, smoother, backward sampler) run on plain
Python floats; they are the hot path of the MCMC engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

SEASONAL_RATE = 1.0 / 52.0  # cycles per week; the seasonal period is fixed at 52
_LOG_2PI = math.log(2.0 * math.pi)
MIN_OBS_VARIANCE = 1e-12  # keeps the filter defined under "exact" observation


# ---------------------------------------------------------------------------
# mean structures
# ---------------------------------------------------------------------------

def _warp_cos(t, b, c):
    t = np.asarray(t, dtype=float)
    return np.sqrt((1.0 + b * b) / (1.0 + b * b * np.cos(t) ** 2)) * np.cos(t + c * np.cos(t))


def _warp_sin(t, b, c):
    t = np.asarray(t, dtype=float)
    return np.sqrt((1.0 + b * b) / (1.0 + b * b * np.sin(t) ** 2)) * np.sin(t + c * np.sin(t))


@dataclass(frozen=True)
class MeanStructure:
    """Mean path of the latent process: flat, cosine, or shape-warped cosine pair.

    kind 'constant' uses only `level`; 'harmonic' uses `level` (amplitude)
    and `phase`; 'warped' additionally uses `level2` and the four shape
    parameters.  Angles advance at the fixed rate of one cycle per 52 weeks.
    """

    kind: str
    level: float = 0.0       # mu for constant, amplitude for the cosine terms
    phase: float = 0.0       # shift in weeks, unwrapped
    level2: float = 0.0      # second-term amplitude (warped only)
    b1: float = 0.0
    c1: float = 0.0
    b2: float = 0.0
    c2: float = 0.0

    _KINDS = ("constant", "harmonic", "warped")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValidationError(f"unknown mean kind {self.kind!r}; expected one of {self._KINDS}")

    @classmethod
    def constant(cls, level: float) -> "MeanStructure":
        return cls("constant", level=level)

    @classmethod
    def harmonic(cls, amplitude: float, phase: float) -> "MeanStructure":
        return cls("harmonic", level=amplitude, phase=phase)

    @classmethod
    def warped(cls, a0: float, a1: float, phase: float,
               b1: float, c1: float, b2: float, c2: float) -> "MeanStructure":
        return cls("warped", level=a0, level2=a1, phase=phase, b1=b1, c1=c1, b2=b2, c2=c2)

    def parameter_names(self) -> list[str]:
        """Free parameters of this structure, in sampling order."""
        if self.kind == "constant":
            return ["mu"]
        if self.kind == "harmonic":
            return ["alpha0", "omega"]
        return ["alpha0", "alpha1", "omega", "b1", "c1", "b2", "c2"]

    def replace(self, **values: float) -> "MeanStructure":
        mapping = {"mu": "level", "alpha0": "level", "alpha1": "level2", "omega": "phase",
                   "b1": "b1", "c1": "c1", "b2": "b2", "c2": "c2"}
        kwargs = {
            "kind": self.kind, "level": self.level, "phase": self.phase, "level2": self.level2,
            "b1": self.b1, "c1": self.c1, "b2": self.b2, "c2": self.c2,
        }
        for name, v in values.items():
            kwargs[mapping[name]] = float(v)
        return MeanStructure(**kwargs)


def mean_at(mean: MeanStructure, t):
    """Mean of the latent process at week index t (1-based; scalar or array)."""
    if mean.kind == "constant":
        if np.ndim(t) == 0:
            return mean.level
        return np.full(np.shape(t), mean.level, dtype=float)
    angle = 2.0 * math.pi * SEASONAL_RATE * (np.asarray(t, dtype=float) + mean.phase)
    if mean.kind == "harmonic":
        out = mean.level * np.cos(angle)
    else:
        out = mean.level * _warp_cos(angle, mean.b1, mean.c1) \
            + mean.level2 * _warp_sin(angle, mean.b2, mean.c2)
    return float(out) if np.ndim(t) == 0 else out


def mean_path(mean: MeanStructure, T: int) -> list[float]:
    """mu_1..mu_T as a plain list (hot-path friendly)."""
    return [float(v) for v in np.atleast_1d(mean_at(mean, np.arange(1, T + 1)))]


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ar1Params:
    phi: float
    var_ar: float
    mean: MeanStructure

    def __post_init__(self):
        if not (abs(self.phi) < 1.0):
            raise ValidationError(f"phi={self.phi} is outside (-1, 1); stationary start undefined")
        if self.var_ar < 0.0:
            raise ValidationError(f"process-noise variance must be >= 0, got {self.var_ar}")

    @property
    def stationary_variance(self) -> float:
        return self.var_ar / (1.0 - self.phi * self.phi)


@dataclass(frozen=True)
class ObservationNoise:
    """Measurement-error variance, either constant or divided by the valid-day count."""

    mode: str  # 'scaled_by_n' | 'constant'
    variance: float

    def __post_init__(self):
        if self.mode not in ("scaled_by_n", "constant"):
            raise ValidationError(f"unknown noise mode {self.mode!r}")
        if not (self.variance > 0.0):
            raise ValidationError(f"observation variance must be positive, got {self.variance}")

    def variance_at(self, n: int) -> float:
        if self.mode == "constant":
            return max(self.variance, MIN_OBS_VARIANCE)
        if n < 1:
            raise ValidationError("scaled_by_n noise requires at least one valid day")
        return max(self.variance / n, MIN_OBS_VARIANCE)

    def variances(self, n: Sequence[int]) -> list[float]:
        return [self.variance_at(int(v)) for v in n]


@dataclass(frozen=True)
class StateSpaceSpec:
    """Structural choices for the latent pollutant model (values are sampled)."""

    mean_kind: str = "constant"
    noise_mode: str = "scaled_by_n"

    def __post_init__(self):
        if self.mean_kind not in MeanStructure._KINDS:
            raise ValidationError(f"unknown mean kind {self.mean_kind!r}")
        if self.noise_mode not in ("scaled_by_n", "constant"):
            raise ValidationError(f"unknown noise mode {self.noise_mode!r}")


# ---------------------------------------------------------------------------
# sequential kernels (plain-float hot path)
# ---------------------------------------------------------------------------

def forward_filter(
    obs: Sequence[float],
    obs_var: Sequence[float],
    mu: Sequence[float],
    phi: float,
    var_ar: float,
):
    """One forward pass; obs_var entries of +inf mark missing observations.

    Returns (loglik, filtered means, filtered variances, predicted means,
    predicted variances), all as plain lists.
    """
    T = len(obs)
    fm = [0.0] * T
    fv = [0.0] * T
    pm = [0.0] * T
    pv = [0.0] * T
    loglik = 0.0
    m = mu[0]
    v = var_ar / (1.0 - phi * phi)
    for t in range(T):
        if t:
            m = mu[t] + phi * (fm[t - 1] - mu[t - 1])
            v = phi * phi * fv[t - 1] + var_ar
        pm[t] = m
        pv[t] = v
        r = obs_var[t]
        if r != math.inf:
            s = v + r
            e = obs[t] - m
            loglik -= 0.5 * (_LOG_2PI + math.log(s) + e * e / s)
            k = v / s
            m += k * e
            v *= 1.0 - k
        fm[t] = m
        fv[t] = v
    return loglik, fm, fv, pm, pv


def rts_smooth(fm, fv, pm, pv, phi):
    """Backward Rauch-Tung-Striebel pass over forward_filter output."""
    T = len(fm)
    sm = [0.0] * T
    sv = [0.0] * T
    sm[-1] = fm[-1]
    sv[-1] = fv[-1]
    for t in range(T - 2, -1, -1):
        g = phi * fv[t] / pv[t + 1]
        sm[t] = fm[t] + g * (sm[t + 1] - pm[t + 1])
        sv[t] = fv[t] + g * g * (sv[t + 1] - pv[t + 1])
    return sm, sv


def backward_sample(fm, fv, pm, pv, phi, z: Sequence[float]):
    """Draw one latent path given standard-normal innovations z (length T).

    Returns (path, log density of the draw under this conditional), so the
    caller gets the proposal density for free.
    """
    T = len(fm)
    x = [0.0] * T
    logq = 0.0
    v = max(fv[-1], MIN_OBS_VARIANCE)
    sd = math.sqrt(v)
    x[-1] = fm[-1] + sd * z[-1]
    logq -= 0.5 * (_LOG_2PI + math.log(v)) + 0.5 * z[-1] * z[-1]
    for t in range(T - 2, -1, -1):
        g = phi * fv[t] / pv[t + 1]
        mean = fm[t] + g * (x[t + 1] - pm[t + 1])
        v = max(fv[t] - g * g * pv[t + 1], MIN_OBS_VARIANCE)
        sd = math.sqrt(v)
        x[t] = mean + sd * z[t]
        logq -= 0.5 * (_LOG_2PI + math.log(v)) + 0.5 * z[t] * z[t]
    return x, logq


def backward_logpdf(fm, fv, pm, pv, phi, x: Sequence[float]) -> float:
    """Density of a given path under the backward-sampling conditional."""
    T = len(fm)
    v = max(fv[-1], MIN_OBS_VARIANCE)
    e = x[-1] - fm[-1]
    logq = -0.5 * (_LOG_2PI + math.log(v) + e * e / v)
    for t in range(T - 2, -1, -1):
        g = phi * fv[t] / pv[t + 1]
        mean = fm[t] + g * (x[t + 1] - pm[t + 1])
        v = max(fv[t] - g * g * pv[t + 1], MIN_OBS_VARIANCE)
        e = x[t] - mean
        logq -= 0.5 * (_LOG_2PI + math.log(v) + e * e / v)
    return logq


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _prepare(y, n, ar: Ar1Params, noise: ObservationNoise):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 1:
        raise ValidationError("observation series must be 1-D and non-empty")
    if not np.all(np.isfinite(y)):
        raise ValidationError("observation series contains non-finite values")
    if n is None:
        n = np.ones(y.size, dtype=int)
    n = np.asarray(n, dtype=int)
    if n.shape != y.shape:
        raise ValidationError("valid-day counts must match the observation series length")
    obs_var = noise.variances(n)
    mu = mean_path(ar.mean, y.size)
    return y.tolist(), obs_var, mu


def kalman_loglik(y, n, ar: Ar1Params, noise: ObservationNoise) -> float:
    """Exact log density of the observed series under the linear-Gaussian model."""
    obs, obs_var, mu = _prepare(y, n, ar, noise)
    loglik, *_ = forward_filter(obs, obs_var, mu, ar.phi, ar.var_ar)
    return loglik


def smooth(y, n, ar: Ar1Params, noise: ObservationNoise) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of each latent X_t given the whole series."""
    obs, obs_var, mu = _prepare(y, n, ar, noise)
    _, fm, fv, pm, pv = forward_filter(obs, obs_var, mu, ar.phi, ar.var_ar)
    sm, sv = rts_smooth(fm, fv, pm, pv, ar.phi)
    return np.array(sm), np.array(sv)


def ffbs_sample(y, n, ar: Ar1Params, noise: ObservationNoise,
                rng: np.random.Generator) -> np.ndarray:
    """One joint draw of the latent path given the series and parameters."""
    obs, obs_var, mu = _prepare(y, n, ar, noise)
    _, fm, fv, pm, pv = forward_filter(obs, obs_var, mu, ar.phi, ar.var_ar)
    z = rng.standard_normal(len(obs)).tolist()
    x, _ = backward_sample(fm, fv, pm, pv, ar.phi, z)
    return np.array(x)


@dataclass(frozen=True)
class SimulatedSeries:
    latent: np.ndarray        # X_t, log scale
    log_observed: np.ndarray  # y_t = X_t + noise
    observed: np.ndarray      # exp(y_t), concentration scale


def simulate_ar1(ar: Ar1Params, noise: ObservationNoise, n_schedule, T: int,
                 rng: np.random.Generator) -> SimulatedSeries:
    """Generate latent, log-observed, and concentration-scale series of length T."""
    if T < 1:
        raise ValidationError("need T >= 1")
    n = np.broadcast_to(np.asarray(n_schedule, dtype=int), (T,))
    mu = mean_path(ar.mean, T)
    x = np.empty(T)
    shocks = rng.standard_normal(T)
    x[0] = mu[0] + math.sqrt(ar.stationary_variance) * shocks[0]
    sd = math.sqrt(ar.var_ar)
    for t in range(1, T):
        x[t] = mu[t] + ar.phi * (x[t - 1] - mu[t - 1]) + sd * shocks[t]
    obs_sd = np.sqrt(noise.variances(n))
    y = x + obs_sd * rng.standard_normal(T)
    return SimulatedSeries(latent=x, log_observed=y, observed=np.exp(y))


def ar1_logpdf(x, ar: Ar1Params) -> float:
    """Log density of a latent path under the AR(1) prior (vectorized)."""
    x = np.asarray(x, dtype=float)
    mu = np.atleast_1d(mean_at(ar.mean, np.arange(1, x.size + 1)))
    v0 = ar.stationary_variance
    if v0 <= 0.0:
        return -math.inf
    dev = x - mu
    out = -0.5 * (_LOG_2PI + math.log(v0) + dev[0] ** 2 / v0)
    if x.size > 1:
        resid = dev[1:] - ar.phi * dev[:-1]
        out += -0.5 * (
            (x.size - 1) * (_LOG_2PI + math.log(ar.var_ar))
            + float(np.dot(resid, resid)) / ar.var_ar
        )
    return float(out)


def gaussian_obs_logpdf(w, x, obs_var) -> float:
    """Sum of log N(w_t; x_t, obs_var_t) over the series (vectorized)."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    v = np.asarray(obs_var, dtype=float)
    e = w - x
    return float(-0.5 * np.sum(_LOG_2PI + np.log(v) + e * e / v))
