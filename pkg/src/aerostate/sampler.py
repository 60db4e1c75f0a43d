"""Posterior sampling for the joint count/latent-exposure model.

Each iteration updates, in order: (a) the whole latent path in one block,
(b) every regression coefficient by adaptive scalar random-walk Metropolis,
(c) the latent-process parameters (mean structure, autocorrelation, the two
variance parameters) the same way.

The latent block proposal is a forward-filter backward-sampling draw from
the linear-Gaussian part of the model augmented with a local Gaussian
approximation of the count likelihood (a few Newton passes locate the
conditional mode).  The proposal density is evaluated exactly on both the
proposed and current paths, so the Metropolis-Hastings correction makes the
update target the exact conditional even though counts enter non-linearly.
Without a count channel the proposal *is* the exact conditional and every
draw is accepted.

Chains use independent RNG streams derived from (seed, chain id), so results
are identical whether chains run sequentially or in parallel.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import WeeklyDataset
from .errors import ConfigError, InitializationError, ValidationError
from .outcome import DesignFrame, OutcomeSpec, PriorSpec, build_design, poisson_loglik_series
from .statespace import (
    Ar1Params,
    MeanStructure,
    ObservationNoise,
    StateSpaceSpec,
    ar1_logpdf,
    backward_logpdf,
    backward_sample,
    forward_filter,
    gaussian_obs_logpdf,
    mean_path,
    rts_smooth,
)

_LOG_2PI = math.log(2.0 * math.pi)
_NEWTON_MAX = 4
_NEWTON_TOL = 1e-6
_MIN_CURVATURE = 1e-10

LIKELIHOOD_MODES = ("full", "gaussian_only", "prior_only")


def resolve_workers(requested: int | None, jobs: int) -> int:
    """Worker count capped by the job count, CPUs, and AEROSTATE_THREADS."""
    cap = os.cpu_count() or 1
    env = os.environ.get("AEROSTATE_THREADS")
    if env:
        try:
            cap = min(cap, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"AEROSTATE_THREADS must be an integer, got {env!r}") from None
    if requested is not None:
        cap = min(cap, max(1, requested))
    return max(1, min(cap, jobs))


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    iterations: int = 15000
    burn_in: int = 5000
    thin: int = 5
    seed: int = 0
    adapt_window: int = 50
    target_accept: float = 0.44
    latent_thin: int = 1
    workers: int | None = None
    likelihood: str = "full"

    def __post_init__(self):
        if self.chains < 1:
            raise ConfigError(f"need at least one chain, got {self.chains}")
        if self.iterations < 1:
            raise ConfigError(f"need at least one iteration, got {self.iterations}")
        if not (0 <= self.burn_in < self.iterations):
            raise ConfigError(
                f"burn-in {self.burn_in} must be shorter than the run ({self.iterations})"
            )
        if self.thin < 1 or self.latent_thin < 1:
            raise ConfigError("thinning factors must be >= 1")
        if not (0.0 < self.target_accept < 1.0):
            raise ConfigError("target acceptance must lie in (0, 1)")
        if self.adapt_window < 1:
            raise ConfigError("adapt_window must be >= 1")
        if self.likelihood not in LIKELIHOOD_MODES:
            raise ConfigError(f"likelihood must be one of {LIKELIHOOD_MODES}")

    @property
    def n_retained(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


@dataclass
class PosteriorDraws:
    """Retained samples from all chains, plus everything WAIC/reporting needs."""

    names: list[str]
    values: np.ndarray            # (draws, parameters)
    chain_ids: np.ndarray
    iterations: np.ndarray
    pointwise_loglik: np.ndarray  # (draws, outcome points)
    latent: np.ndarray | None
    latent_chain_ids: np.ndarray | None
    seed: int
    n_chains: int
    acceptance: dict[str, float]
    cause: str | None = None
    variant: str | None = None
    point_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.values.shape[0] != self.chain_ids.shape[0]:
            raise ValidationError("draw matrix and chain ids disagree on row count")
        if self.pointwise_loglik.shape[0] != self.values.shape[0]:
            raise ValidationError("pointwise log-likelihood rows must match draw count")
        if self.pointwise_loglik.size and not np.all(np.isfinite(self.pointwise_loglik)):
            raise ValidationError("pointwise log-likelihood contains non-finite entries")

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    def parameter(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}; have {self.names}") from None

    def by_chain(self, name: str) -> list[np.ndarray]:
        col = self.parameter(name)
        return [col[self.chain_ids == c] for c in range(self.n_chains)]


def export_draws_csv(draws: PosteriorDraws, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration", "parameter", "value"])
        for i in range(draws.n_draws):
            chain = draws.chain_ids[i]
            it = draws.iterations[i]
            for j, name in enumerate(draws.names):
                writer.writerow([chain, it, name, repr(float(draws.values[i, j]))])


def export_pointwise_csv(draws: PosteriorDraws, path) -> None:
    labels = draws.point_labels or [f"p{i}" for i in range(draws.pointwise_loglik.shape[1])]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration", *labels])
        for i in range(draws.n_draws):
            row = [draws.chain_ids[i], draws.iterations[i]]
            row.extend(repr(float(v)) for v in draws.pointwise_loglik[i])
            writer.writerow(row)


def read_draws_csv(draws_path, pointwise_path=None) -> PosteriorDraws:
    """Rebuild a draws object from the two CSV exports (latent paths are not exported)."""
    rows: dict[tuple[int, int], dict[str, float]] = {}
    with Path(draws_path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["chain", "iteration", "parameter", "value"]:
            raise ValidationError(f"unexpected draws header {header}")
        for chain, it, name, value in reader:
            rows.setdefault((int(chain), int(it)), {})[name] = float(value)
    if not rows:
        raise ValidationError("draws file has no rows")
    keys = sorted(rows)
    names = sorted(rows[keys[0]])
    values = np.array([[rows[k][n] for n in names] for k in keys])
    chain_ids = np.array([k[0] for k in keys], dtype=int)
    iterations = np.array([k[1] for k in keys], dtype=int)

    labels: list[str] = []
    if pointwise_path is not None:
        pw_rows = {}
        with Path(pointwise_path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            labels = header[2:]
            for row in reader:
                pw_rows[(int(row[0]), int(row[1]))] = [float(v) for v in row[2:]]
        pointwise = np.array([pw_rows[k] for k in keys])
    else:
        pointwise = np.zeros((len(keys), 0))

    return PosteriorDraws(
        names=names, values=values, chain_ids=chain_ids, iterations=iterations,
        pointwise_loglik=pointwise, latent=None, latent_chain_ids=None,
        seed=-1, n_chains=int(chain_ids.max()) + 1, acceptance={}, point_labels=labels,
    )


# ---------------------------------------------------------------------------
# prepared model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Model:
    """Immutable arrays and structure for one fit; safe to ship to workers."""

    beta_names: tuple[str, ...]      # regression blocks, in update order
    beta_columns: tuple[str, ...]    # 'const' | 'temp' | 'latent' | 'cov:<i>'
    latent_names: tuple[str, ...]    # mean structure + phi + sigma_ar + sigma_obs
    counts: np.ndarray | None
    log_offset: np.ndarray | None
    temp_lag: np.ndarray | None
    log_cov_lag: np.ndarray | None
    w: np.ndarray | None             # observed log concentrations, length T
    n: np.ndarray | None             # valid-day counts, length T
    T: int
    mean_kind: str
    noise_mode: str
    priors: PriorSpec
    mu_center: float
    likelihood: str
    start: dict[str, float]
    latent_start: np.ndarray | None
    point_labels: tuple[str, ...]
    cause: str | None = None
    variant: str | None = None

    @property
    def has_latent(self) -> bool:
        return self.w is not None

    @property
    def has_counts(self) -> bool:
        return self.counts is not None and self.likelihood == "full"

    @property
    def has_obs(self) -> bool:
        return self.has_latent and self.likelihood != "prior_only"

    @property
    def sigma_obs_name(self) -> str:
        return "sigma_x" if self.noise_mode == "scaled_by_n" else "sigma_v"


def _mean_structure_names(kind: str) -> tuple[str, ...]:
    if kind == "constant":
        return ("mu",)
    if kind == "harmonic":
        return ("alpha0", "omega")
    return ("alpha0", "alpha1", "omega", "b1", "c1", "b2", "c2")


def _seasonal_start(kind: str, center: float) -> dict[str, float]:
    if kind == "constant":
        return {"mu": center}
    out = {name: 0.0 for name in _mean_structure_names(kind)}
    return out


def _moment_sigmas(w: np.ndarray, n: np.ndarray, noise_mode: str,
                   priors: PriorSpec) -> tuple[float, float]:
    lo = priors.sigma_low + 0.05
    hi = priors.sigma_high - 0.05
    spread = float(np.std(w)) if w.size > 1 else 1.0
    rough = float(np.std(np.diff(w))) / math.sqrt(2.0) if w.size > 2 else spread
    sigma_ar = min(max(rough if rough > 0 else 0.1, lo), hi)
    obs_scale = 0.5 * spread
    if noise_mode == "scaled_by_n":
        obs_scale *= math.sqrt(float(np.median(n)))
    sigma_obs = min(max(obs_scale if obs_scale > 0 else 0.1, lo), hi)
    return sigma_ar, sigma_obs


def _build_joint_model(dataset: WeeklyDataset, outcome_spec: OutcomeSpec,
                       ss_spec: StateSpaceSpec, likelihood: str) -> _Model:
    frame: DesignFrame = build_design(dataset, outcome_spec)
    priors = outcome_spec.priors

    beta_names = ["beta0"]
    beta_columns = ["const"]
    if outcome_spec.include_temperature:
        beta_names.append("beta_temp")
        beta_columns.append("temp")
    if frame.me_log_observed is not None:
        beta_names.append("beta_x")
        beta_columns.append("latent")
    for i, cov in enumerate(frame.covariate_names):
        beta_names.append(f"beta_{cov}")
        beta_columns.append(f"cov:{i}")

    has_latent = frame.me_log_observed is not None
    latent_names: tuple[str, ...] = ()
    mu_center = 0.0
    if has_latent:
        mu_center = float(np.mean(frame.me_log_observed))
        sigma_name = "sigma_x" if ss_spec.noise_mode == "scaled_by_n" else "sigma_v"
        latent_names = (*_mean_structure_names(ss_spec.mean_kind), "phi", "sigma_ar", sigma_name)

    counts = frame.counts.astype(float)
    mean_count = float(np.mean(counts))
    mean_offset = float(np.mean(np.exp(frame.log_offset)))
    if mean_count <= 0:
        raise InitializationError("mean death count is zero; intercept start undefined",
                                  block="beta0")
    start = {name: 0.0 for name in beta_names}
    start["beta0"] = math.log(mean_count / mean_offset)
    latent_start = None
    if has_latent:
        start.update(_seasonal_start(ss_spec.mean_kind, mu_center))
        start["phi"] = 0.5
        sigma_ar, sigma_obs = _moment_sigmas(
            frame.me_log_observed, frame.me_valid_days, ss_spec.noise_mode, priors
        )
        start["sigma_ar"] = sigma_ar
        start[sigma_name] = sigma_obs
        latent_start = frame.me_log_observed.copy()

    weeks = dataset.weeks
    point_labels = tuple(f"ll_{w.year}W{w.week:02d}" for w in weeks[1:])

    return _Model(
        beta_names=tuple(beta_names),
        beta_columns=tuple(beta_columns),
        latent_names=latent_names,
        counts=counts,
        log_offset=frame.log_offset,
        temp_lag=frame.temperature_lag,
        log_cov_lag=frame.log_covariates_lag,
        w=frame.me_log_observed,
        n=frame.me_valid_days,
        T=frame.n_weeks,
        mean_kind=ss_spec.mean_kind,
        noise_mode=ss_spec.noise_mode,
        priors=priors,
        mu_center=mu_center,
        likelihood=likelihood,
        start=start,
        latent_start=latent_start,
        point_labels=point_labels,
        cause=outcome_spec.cause,
        variant="me" if has_latent else "no-me",
    )


def _build_series_model(series: np.ndarray, n: np.ndarray | None,
                        ss_spec: StateSpaceSpec, priors: PriorSpec,
                        likelihood: str) -> _Model:
    w = np.asarray(series, dtype=float)
    if w.ndim != 1 or w.size < 3:
        raise ValidationError("series must be 1-D with at least 3 points")
    if not np.all(np.isfinite(w)):
        raise ValidationError("series contains non-finite values")
    n = np.ones(w.size, dtype=int) if n is None else np.asarray(n, dtype=int)
    mu_center = float(np.mean(w))
    sigma_name = "sigma_x" if ss_spec.noise_mode == "scaled_by_n" else "sigma_v"
    start = _seasonal_start(ss_spec.mean_kind, mu_center)
    start["phi"] = 0.5
    sigma_ar, sigma_obs = _moment_sigmas(w, n, ss_spec.noise_mode, priors)
    start["sigma_ar"] = sigma_ar
    start[sigma_name] = sigma_obs
    return _Model(
        beta_names=(), beta_columns=(),
        latent_names=(*_mean_structure_names(ss_spec.mean_kind), "phi", "sigma_ar", sigma_name),
        counts=None, log_offset=None, temp_lag=None, log_cov_lag=None,
        w=w, n=n, T=w.size,
        mean_kind=ss_spec.mean_kind, noise_mode=ss_spec.noise_mode,
        priors=priors, mu_center=mu_center, likelihood=likelihood,
        start=start, latent_start=w.copy(),
        point_labels=tuple(f"ll_t{t}" for t in range(1, w.size + 1)),
        cause=None, variant="series",
    )


# ---------------------------------------------------------------------------
# per-chain state
# ---------------------------------------------------------------------------

class _Chain:
    def __init__(self, model: _Model, config: SamplerConfig, chain_id: int,
                 fixed: dict[str, float]):
        self.model = model
        self.config = config
        self.chain_id = chain_id
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, chain_id]))
        self.fixed = dict(fixed)

        self.theta: dict[str, float] = dict(model.start)
        self.theta.update(self.fixed)
        self.x = None if model.latent_start is None else model.latent_start.copy()
        # Without a count channel the latent path can be integrated out
        # exactly, so latent-process parameters target the Kalman marginal
        # and the path is redrawn afterwards (collapsed update).
        self.collapsed = model.has_latent and not model.has_counts

        all_names = list(model.beta_names) + list(model.latent_names)
        self.log_scales = {name: math.log(0.1) for name in all_names}
        self.proposals = {name: 0 for name in all_names}
        self.accepts = {name: 0 for name in all_names + ["latent_path"]}
        self.post_burn_proposals = {name: 0 for name in all_names + ["latent_path"]}
        self.post_burn_accepts = {name: 0 for name in all_names + ["latent_path"]}

        self._refresh_caches(check=True)

    # -- cached quantities -------------------------------------------------

    def _ar_params(self, overrides: dict[str, float] | None = None) -> Ar1Params:
        th = self.theta if overrides is None else {**self.theta, **overrides}
        kind = self.model.mean_kind
        if kind == "constant":
            mean = MeanStructure.constant(th["mu"])
        elif kind == "harmonic":
            mean = MeanStructure.harmonic(th["alpha0"], th["omega"])
        else:
            mean = MeanStructure.warped(th["alpha0"], th["alpha1"], th["omega"],
                                        th["b1"], th["c1"], th["b2"], th["c2"])
        return Ar1Params(phi=th["phi"], var_ar=th["sigma_ar"] ** 2, mean=mean)

    def _obs_vars(self, sigma: float | None = None) -> np.ndarray:
        model = self.model
        s = self.theta[model.sigma_obs_name] if sigma is None else sigma
        noise = ObservationNoise(model.noise_mode, max(s, 1e-10) ** 2)
        return np.array(noise.variances(model.n))

    def _eta_base(self) -> np.ndarray:
        model = self.model
        eta = model.log_offset + self.theta["beta0"]
        for name, col in zip(model.beta_names, model.beta_columns):
            if col == "temp":
                eta = eta + self.theta[name] * model.temp_lag
            elif col.startswith("cov:"):
                eta = eta + self.theta[name] * model.log_cov_lag[:, int(col.split(":")[1])]
        return eta

    def _eta(self) -> np.ndarray:
        eta = self._eta_base()
        if self.model.has_latent and "beta_x" in self.theta:
            eta = eta + self.theta["beta_x"] * self.x[:-1]
        return eta

    def _refresh_caches(self, check: bool = False) -> None:
        model = self.model
        if model.counts is not None:
            self.eta = self._eta()
            self.pois = _pois_sum(model.counts, self.eta) if model.has_counts else 0.0
        else:
            self.eta = None
            self.pois = 0.0
        if model.has_latent:
            self.ar_lp = ar1_logpdf(self.x, self._ar_params())
            self.obs_lp = (
                gaussian_obs_logpdf(model.w, self.x, self._obs_vars())
                if model.has_obs else 0.0
            )
        else:
            self.ar_lp = 0.0
            self.obs_lp = 0.0
        self.marg_lp = self._marginal_loglik() if self.collapsed else 0.0
        if check:
            total = self.pois + self.ar_lp + self.obs_lp
            if not math.isfinite(total):
                block = "latent_path"
                if model.has_counts and not math.isfinite(self.pois):
                    block = "outcome"
                elif model.has_obs and not math.isfinite(self.obs_lp):
                    block = "observation"
                raise InitializationError("posterior density is not finite at the start state",
                                          block=block)
            for name in (*model.beta_names, *model.latent_names):
                if name in self.fixed:
                    continue
                if not math.isfinite(self._log_prior(name, self.theta[name])):
                    raise InitializationError(
                        "start value has zero prior density", block=name
                    )

    # -- priors --------------------------------------------------------------

    def _log_prior(self, name: str, value: float) -> float:
        p = self.model.priors
        if name == "beta0":
            return -0.5 * value * value / p.intercept_variance
        if name.startswith("beta"):
            return -0.5 * value * value / p.coefficient_variance
        if name == "mu":
            d = value - self.model.mu_center
            return -0.5 * d * d / p.mu_variance
        if name in ("alpha0", "alpha1"):
            return -0.5 * value * value / p.seasonal_amplitude_variance
        if name in ("b1", "c1", "b2", "c2"):
            return -0.5 * value * value / p.seasonal_shape_variance
        if name == "omega":
            return 0.0 if abs(value) <= p.phase_half_range else -math.inf
        if name == "phi":
            return 0.0 if p.phi_low < value < p.phi_high else -math.inf
        if name in ("sigma_ar", "sigma_x", "sigma_v"):
            return 0.0 if p.sigma_low < value < p.sigma_high else -math.inf
        raise KeyError(name)

    # -- adaptive scalar Metropolis -------------------------------------------

    def _adapt(self, name: str, accepted: bool, iteration: int) -> None:
        if iteration >= self.config.burn_in or name not in self.log_scales:
            return
        self.proposals[name] += 1
        gamma = min(0.5, self.proposals[name] ** -0.6)
        step = gamma * ((1.0 if accepted else 0.0) - self.config.target_accept)
        self.log_scales[name] = min(15.0, max(-15.0, self.log_scales[name] + step))

    def _bookkeep(self, name: str, accepted: bool, iteration: int) -> None:
        if accepted:
            self.accepts[name] += 1
        if iteration >= self.config.burn_in:
            self.post_burn_proposals[name] += 1
            if accepted:
                self.post_burn_accepts[name] += 1
        self._adapt(name, accepted, iteration)

    def _update_beta(self, name: str, column: str, iteration: int) -> None:
        if name in self.fixed:
            return
        model = self.model
        cur = self.theta[name]
        prop = cur + math.exp(self.log_scales[name]) * self.rng.standard_normal()
        delta_prior = self._log_prior(name, prop) - self._log_prior(name, cur)
        if model.has_counts:
            if column == "const":
                eta_prop = self.eta + (prop - cur)
            elif column == "temp":
                eta_prop = self.eta + (prop - cur) * model.temp_lag
            elif column == "latent":
                eta_prop = self.eta + (prop - cur) * self.x[:-1]
            else:
                j = int(column.split(":")[1])
                eta_prop = self.eta + (prop - cur) * model.log_cov_lag[:, j]
            pois_prop = _pois_sum(model.counts, eta_prop)
            log_alpha = pois_prop - self.pois + delta_prior
        else:
            eta_prop = None
            pois_prop = self.pois
            log_alpha = delta_prior
        accepted = log_alpha >= 0 or math.log(self.rng.random()) < log_alpha
        if accepted:
            self.theta[name] = prop
            if eta_prop is not None:
                self.eta = eta_prop
                self.pois = pois_prop
        self._bookkeep(name, accepted, iteration)

    def _marginal_loglik(self, overrides: dict[str, float] | None = None) -> float:
        """Observed-series log likelihood with the latent path integrated out."""
        model = self.model
        if not model.has_obs:
            return 0.0
        th = self.theta if overrides is None else {**self.theta, **overrides}
        ar = self._ar_params(overrides)
        sigma = th[model.sigma_obs_name]
        noise = ObservationNoise(model.noise_mode, max(sigma, 1e-10) ** 2)
        loglik, *_ = forward_filter(
            model.w.tolist(), noise.variances(model.n),
            mean_path(ar.mean, model.T), ar.phi, ar.var_ar,
        )
        return loglik

    def _update_latent_param_collapsed(self, name: str, iteration: int) -> None:
        if name in self.fixed:
            return
        cur = self.theta[name]
        prop = cur + math.exp(self.log_scales[name]) * self.rng.standard_normal()
        prior_prop = self._log_prior(name, prop)
        if prior_prop == -math.inf:
            self._bookkeep(name, False, iteration)
            return
        marg_prop = self._marginal_loglik({name: prop})
        delta = prior_prop - self._log_prior(name, cur) + marg_prop - self.marg_lp
        accepted = math.isfinite(delta) and (
            delta >= 0 or math.log(self.rng.random()) < delta
        )
        if accepted:
            self.theta[name] = prop
            self.marg_lp = marg_prop
        self._bookkeep(name, accepted, iteration)

    def _update_latent_param(self, name: str, iteration: int) -> None:
        if name in self.fixed:
            return
        model = self.model
        cur = self.theta[name]
        prop = cur + math.exp(self.log_scales[name]) * self.rng.standard_normal()
        prior_prop = self._log_prior(name, prop)
        if prior_prop == -math.inf:
            self._bookkeep(name, False, iteration)
            return
        delta = prior_prop - self._log_prior(name, cur)
        is_obs_sigma = name == model.sigma_obs_name
        ar_prop = self.ar_lp
        obs_prop = self.obs_lp
        if is_obs_sigma:
            if model.has_obs:
                obs_prop = gaussian_obs_logpdf(model.w, self.x, self._obs_vars(sigma=prop))
                delta += obs_prop - self.obs_lp
        else:
            ar_prop = ar1_logpdf(self.x, self._ar_params({name: prop}))
            delta += ar_prop - self.ar_lp
        accepted = math.isfinite(delta) and (
            delta >= 0 or math.log(self.rng.random()) < delta
        )
        if accepted:
            self.theta[name] = prop
            self.ar_lp = ar_prop
            self.obs_lp = obs_prop
        self._bookkeep(name, accepted, iteration)

    # -- latent path block ------------------------------------------------------

    def _proposal_observations(self, expansion: np.ndarray, eta_base: np.ndarray | None):
        """Combined pseudo-observations at a given expansion path."""
        model = self.model
        T = model.T
        if model.has_obs:
            obs_var = self._obs_vars()
            prec = 1.0 / obs_var
            mean_times_prec = model.w * prec
        else:
            prec = np.zeros(T)
            mean_times_prec = np.zeros(T)
        if model.has_counts:
            b2 = self.theta["beta_x"]
            eta = eta_base + b2 * expansion[:-1]
            lam = np.exp(np.minimum(eta, 50.0))
            h = b2 * b2 * lam
            usable = h > _MIN_CURVATURE
            z = np.where(usable, expansion[:-1] + (model.counts - lam) / np.where(usable, b2 * lam, 1.0), 0.0)
            prec = prec.copy()
            mean_times_prec = mean_times_prec.copy()
            prec[:-1] += np.where(usable, h, 0.0)
            mean_times_prec[:-1] += np.where(usable, h * z, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            var = np.where(prec > 0.0, 1.0 / prec, math.inf)
            mean = np.where(prec > 0.0, mean_times_prec / prec, 0.0)
        return mean.tolist(), var.tolist()

    def _latent_target(self, x: np.ndarray, ar: Ar1Params, obs_var: np.ndarray | None,
                       eta_base: np.ndarray | None):
        model = self.model
        total = ar1_logpdf(x, ar)
        parts = {"ar": total, "obs": 0.0, "pois": 0.0}
        if model.has_obs:
            parts["obs"] = gaussian_obs_logpdf(model.w, x, obs_var)
            total += parts["obs"]
        if model.has_counts:
            eta = eta_base + self.theta["beta_x"] * x[:-1]
            parts["pois"] = _pois_sum(model.counts, eta)
            total += parts["pois"]
        return total, parts

    def _update_latent(self, iteration: int) -> None:
        model = self.model
        ar = self._ar_params()
        mu = mean_path(ar.mean, model.T)
        obs_var_arr = self._obs_vars() if model.has_obs else None
        eta_base = self._eta_base() if model.has_counts else None

        expansion = self.x
        fm = fv = pm = pv = None
        for _ in range(_NEWTON_MAX if model.has_counts else 1):
            mean, var = self._proposal_observations(expansion, eta_base)
            _, fm, fv, pm, pv = forward_filter(mean, var, mu, ar.phi, ar.var_ar)
            if not model.has_counts:
                break
            sm, _ = rts_smooth(fm, fv, pm, pv, ar.phi)
            sm = np.array(sm)
            shift = float(np.max(np.abs(sm - expansion)))
            expansion = sm
            if shift < _NEWTON_TOL:
                break
        if model.has_counts:
            # the proposal model must match the final expansion point
            mean, var = self._proposal_observations(expansion, eta_base)
            _, fm, fv, pm, pv = forward_filter(mean, var, mu, ar.phi, ar.var_ar)

        z = self.rng.standard_normal(model.T).tolist()
        x_prop_list, logq_prop = backward_sample(fm, fv, pm, pv, ar.phi, z)
        x_prop = np.array(x_prop_list)

        if model.has_counts:
            logq_cur = backward_logpdf(fm, fv, pm, pv, ar.phi, self.x.tolist())
            target_prop, parts_prop = self._latent_target(x_prop, ar, obs_var_arr, eta_base)
            target_cur = self.ar_lp + self.obs_lp + self.pois
            log_alpha = (target_prop - target_cur) + (logq_cur - logq_prop)
            accepted = math.isfinite(log_alpha) and (
                log_alpha >= 0 or math.log(self.rng.random()) < log_alpha
            )
        else:
            # exact conditional draw: always accepted
            target_prop, parts_prop = self._latent_target(x_prop, ar, obs_var_arr, eta_base)
            accepted = math.isfinite(target_prop)

        if accepted:
            self.x = x_prop
            self.ar_lp = parts_prop["ar"]
            self.obs_lp = parts_prop["obs"]
            self.pois = parts_prop["pois"]
            if model.counts is not None:
                self.eta = self._eta()
        self._bookkeep("latent_path", accepted, iteration)

    # -- pointwise log likelihood ----------------------------------------------

    def _pointwise(self) -> np.ndarray:
        model = self.model
        if model.counts is not None:
            return poisson_loglik_series(model.counts, self._eta())
        if model.has_obs:
            obs_var = self._obs_vars()
            e = model.w - self.x
            return -0.5 * (_LOG_2PI + np.log(obs_var) + e * e / obs_var)
        return np.zeros(0)

    # -- main loop ----------------------------------------------------------------

    def run(self):
        model, config = self.model, self.config
        kept_values = []
        kept_iters = []
        kept_pointwise = []
        kept_latent = []
        names = list(model.beta_names) + list(model.latent_names)
        kept_count = 0
        for it in range(config.iterations):
            if self.collapsed:
                for name in model.latent_names:
                    self._update_latent_param_collapsed(name, it)
                if "latent" not in self.fixed:
                    self._update_latent(it)
                for name, column in zip(model.beta_names, model.beta_columns):
                    self._update_beta(name, column, it)
            else:
                if model.has_latent and "latent" not in self.fixed:
                    self._update_latent(it)
                for name, column in zip(model.beta_names, model.beta_columns):
                    self._update_beta(name, column, it)
                for name in model.latent_names:
                    self._update_latent_param(name, it)
            if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
                kept_values.append([self.theta[n] for n in names])
                kept_iters.append(it)
                kept_pointwise.append(self._pointwise())
                if model.has_latent and kept_count % config.latent_thin == 0:
                    kept_latent.append(self.x.copy())
                kept_count += 1
        rates = {}
        for name, total in self.post_burn_proposals.items():
            if total:
                rates[name] = self.post_burn_accepts[name] / total
        return {
            "names": names,
            "values": np.array(kept_values),
            "iterations": np.array(kept_iters, dtype=int),
            "pointwise": np.array(kept_pointwise),
            "latent": np.array(kept_latent) if kept_latent else None,
            "rates": rates,
        }


def _pois_sum(y: np.ndarray, eta: np.ndarray) -> float:
    """Count-channel log likelihood up to the fixed y! term."""
    with np.errstate(over="ignore"):
        lam_total = float(np.sum(np.exp(eta)))
    total = float(np.dot(y, eta)) - lam_total
    return total if math.isfinite(total) else -math.inf


def _run_chain(args) -> dict:
    model, config, chain_id, fixed = args
    return _Chain(model, config, chain_id, fixed).run()


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def _run_all(model: _Model, config: SamplerConfig,
             fixed: dict[str, float] | None) -> PosteriorDraws:
    fixed = dict(fixed or {})
    unknown = set(fixed) - set(model.beta_names) - set(model.latent_names) - {"latent"}
    if unknown:
        raise ConfigError(f"cannot fix unknown parameters {sorted(unknown)}")
    jobs = [(model, config, c, fixed) for c in range(config.chains)]
    workers = resolve_workers(config.workers, config.chains)
    if workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]

    names = results[0]["names"]
    values = np.vstack([r["values"] for r in results])
    chain_ids = np.concatenate([
        np.full(r["values"].shape[0], c, dtype=int) for c, r in enumerate(results)
    ])
    iterations = np.concatenate([r["iterations"] for r in results])
    pointwise = np.vstack([r["pointwise"] for r in results])
    latents = [r["latent"] for r in results if r["latent"] is not None]
    latent = np.vstack(latents) if latents else None
    latent_chains = (
        np.concatenate([
            np.full(r["latent"].shape[0], c, dtype=int)
            for c, r in enumerate(results) if r["latent"] is not None
        ])
        if latents else None
    )
    rates: dict[str, float] = {}
    for key in results[0]["rates"]:
        rates[key] = float(np.mean([r["rates"][key] for r in results]))

    return PosteriorDraws(
        names=names, values=values, chain_ids=chain_ids, iterations=iterations,
        pointwise_loglik=pointwise, latent=latent, latent_chain_ids=latent_chains,
        seed=config.seed, n_chains=config.chains, acceptance=rates,
        cause=model.cause, variant=model.variant,
        point_labels=list(model.point_labels),
    )


def initialize(dataset: WeeklyDataset, outcome_spec: OutcomeSpec,
               ss_spec: StateSpaceSpec, rng=None) -> tuple[dict[str, float], np.ndarray | None]:
    """Moment-based start state: (parameter values, latent path or None)."""
    model = _build_joint_model(dataset, outcome_spec, ss_spec, "full")
    return dict(model.start), None if model.latent_start is None else model.latent_start.copy()


def fit(dataset: WeeklyDataset, outcome_spec: OutcomeSpec, ss_spec: StateSpaceSpec,
        config: SamplerConfig, fixed_params: dict[str, float] | None = None) -> PosteriorDraws:
    """Sample the joint posterior for one cause of death on one dataset."""
    model = _build_joint_model(dataset, outcome_spec, ss_spec, config.likelihood)
    return _run_all(model, config, fixed_params)


def fit_series(series, n, ss_spec: StateSpaceSpec, config: SamplerConfig,
               priors: PriorSpec | None = None,
               fixed_params: dict[str, float] | None = None) -> PosteriorDraws:
    """Fit the latent AR(1) model to one observed log-scale series (no counts).

    The pointwise log-likelihood matrix holds the per-week Gaussian
    observation density, so WAIC comparisons across mean structures are
    well defined.
    """
    model = _build_series_model(np.asarray(series, dtype=float), n, ss_spec,
                                priors or PriorSpec(), config.likelihood)
    return _run_all(model, config, fixed_params)


def sample_latent_paths(series, n, ar: Ar1Params, noise: ObservationNoise,
                        draws: int, rng: np.random.Generator) -> np.ndarray:
    """Repeated latent-block updates at fixed parameters (no count channel).

    Exercises the same machinery `fit` uses for its latent block; with the
    Gaussian-only model each update is an exact conditional draw.
    """
    spec = StateSpaceSpec(mean_kind=ar.mean.kind, noise_mode=noise.mode)
    model = _build_series_model(np.asarray(series, dtype=float), n, spec, PriorSpec(), "full")
    seed = int(rng.integers(0, 2**32 - 1))
    config = SamplerConfig(chains=1, iterations=max(draws, 1), burn_in=0, thin=1, seed=seed)
    fixed = {name: 0.0 for name in model.latent_names}
    if ar.mean.kind == "constant":
        fixed["mu"] = ar.mean.level
    elif ar.mean.kind == "harmonic":
        fixed.update({"alpha0": ar.mean.level, "omega": ar.mean.phase})
    else:
        fixed.update({"alpha0": ar.mean.level, "alpha1": ar.mean.level2,
                      "omega": ar.mean.phase, "b1": ar.mean.b1, "c1": ar.mean.c1,
                      "b2": ar.mean.b2, "c2": ar.mean.c2})
    fixed["phi"] = ar.phi
    fixed["sigma_ar"] = math.sqrt(ar.var_ar)
    fixed[model.sigma_obs_name] = math.sqrt(noise.variance)
    out = _run_all(model, config, fixed)
    return out.latent


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterDiagnostics:
    name: str
    rhat: float | None
    ess: float
    flagged: bool


@dataclass(frozen=True)
class DiagnosticsReport:
    parameters: tuple[ParameterDiagnostics, ...]

    @property
    def flagged(self) -> list[str]:
        return [p.name for p in self.parameters if p.flagged]

    def __getitem__(self, name: str) -> ParameterDiagnostics:
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    return acov


def split_rhat(chains: list[np.ndarray]) -> float:
    """Split-half potential scale reduction; 1.0 for zero-variance chains."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        half = c.size // 2
        if half < 2:
            raise ValidationError("chains too short for split R-hat (need >= 4 draws)")
        halves.append(c[:half])
        halves.append(c[half: 2 * half])
    n = min(h.size for h in halves)
    halves = [h[:n] for h in halves]
    within = float(np.mean([np.var(h, ddof=1) for h in halves]))
    if within == 0.0:
        return 1.0
    means = np.array([h.mean() for h in halves])
    between_over_n = float(np.var(means, ddof=1))
    var_plus = (n - 1) / n * within + between_over_n
    return math.sqrt(var_plus / within)


def effective_sample_size(chains: list[np.ndarray]) -> float:
    """Autocorrelation-based ESS pooled over chains (Geyer pairwise truncation)."""
    arrs = [np.asarray(c, dtype=float) for c in chains]
    n = min(a.size for a in arrs)
    if n < 4:
        raise ValidationError("chains too short for ESS (need >= 4 draws)")
    arrs = [a[:n] for a in arrs]
    m = len(arrs)
    within = float(np.mean([np.var(a, ddof=1) for a in arrs]))
    if within == 0.0:
        return float(m * n)
    mean_acov = np.mean([_autocovariance(a) for a in arrs], axis=0)
    if m > 1:
        var_plus = (n - 1) / n * within + float(np.var([a.mean() for a in arrs], ddof=1))
    else:
        var_plus = float(mean_acov[0]) * n / (n - 1)
    rho = 1.0 - (within - mean_acov) / var_plus
    # Geyer initial monotone positive sequence over lag pairs
    tau = -1.0
    prev = math.inf
    for k in range(0, n - 1, 2):
        pair = float(rho[k] + rho[k + 1]) if k + 1 < n else float(rho[k])
        if pair < 0.0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += 2.0 * pair
    tau = max(tau, 1.0 / (m * n))
    return float(min(m * n, m * n / tau))


def diagnostics(draws: PosteriorDraws) -> DiagnosticsReport:
    """Split R-hat (multi-chain only) and ESS for every parameter."""
    rows = []
    for name in draws.names:
        chains = [c for c in draws.by_chain(name) if c.size]
        ess = effective_sample_size(chains)
        if len(chains) >= 2:
            rhat = split_rhat(chains)
            flagged = rhat > 1.05
        else:
            rhat = None
            flagged = False
        rows.append(ParameterDiagnostics(name=name, rhat=rhat, ess=ess, flagged=flagged))
    return DiagnosticsReport(parameters=tuple(rows))
