"""Scenario harness: generate synthetic weekly data, refit, score recovery.

A scenario fixes a generating model (latent AR(1) exposure, optional
measurement noise, optional Poisson counts), a list of fit variants, and a
replication count.  Scoring records, per replication and variant, whether
each 95% interval covered its generating value and which variant won on
WAIC.  Everything is deterministic given the scenario seed.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .dataset import WeeklyDataset, WeeklyObservation
from .errors import AerostateError, ValidationError
from .evaluate import summarize, waic
from .mmwr import MmwrWeek
from .outcome import LinearPredictorParams, OutcomeSpec, simulate_outcome
from .sampler import PosteriorDraws, SamplerConfig, diagnostics, fit, fit_series
from .statespace import Ar1Params, MeanStructure, ObservationNoise, StateSpaceSpec, simulate_ar1

RHAT_DIVERGENCE = 1.2
_MISMATCH_FLOOR = 1e-3  # keeps the wrong-scale log defined on rare negative draws


@dataclass(frozen=True)
class GeneratorSettings:
    """True values and shapes for the synthetic data generator."""

    T: int = 259
    latent_mean: float = 10.0
    phi: float = 0.7
    sigma_ar: float = math.sqrt(0.5)
    sigma_obs: float | None = None      # None: predictor observed exactly
    noise_mode: str = "constant"
    n_schedule: tuple[int, ...] | int = 7
    intercept: float = 10.0
    latent_coef: float = -1.0
    covariate_coefs: tuple[float, ...] = ()
    offset: float = 1.0
    outcome: bool = True                # False: pure latent-series scenario

    def __post_init__(self):
        object.__setattr__(self, "covariate_coefs", tuple(self.covariate_coefs))
        for name in ("latent_mean", "phi", "sigma_ar", "intercept", "latent_coef"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.T < 3:
            raise ValidationError("need T >= 3")


@dataclass(frozen=True)
class FitVariant:
    """How one model variant consumes the generated predictor."""

    name: str
    me: bool = True
    scaling: str = "matched"   # 'matched' | 'log_mismatch'

    def __post_init__(self):
        if self.scaling not in ("matched", "log_mismatch"):
            raise ValidationError(f"unknown scaling {self.scaling!r}")


@dataclass(frozen=True)
class Scenario:
    name: str
    generator: GeneratorSettings
    variants: tuple[FitVariant, ...]
    replications: int = 20
    seed: int = 0
    sampler: SamplerConfig = field(
        default_factory=lambda: SamplerConfig(chains=2, iterations=2400, burn_in=900, thin=3)
    )

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if not self.variants:
            raise ValidationError("scenario needs at least one fit variant")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ValidationError("variant names must be unique")


@dataclass(frozen=True)
class ParamRecovery:
    parameter: str
    true_value: float
    posterior_mean: float
    lower: float
    upper: float

    @property
    def covered(self) -> bool:
        return self.lower <= self.true_value <= self.upper


@dataclass(frozen=True)
class VariantResult:
    variant: str
    replication: int
    waic: float
    params: tuple[ParamRecovery, ...]
    diverged: bool
    max_rhat: float | None

    def recovery(self, parameter: str) -> ParamRecovery:
        for p in self.params:
            if p.parameter == parameter:
                return p
        raise KeyError(parameter)


@dataclass(frozen=True)
class RecoveryScore:
    scenario: str
    replications: int
    results: tuple[VariantResult, ...]

    def variant_results(self, variant: str) -> list[VariantResult]:
        out = [r for r in self.results if r.variant == variant]
        if not out:
            raise KeyError(variant)
        return out

    @property
    def variants(self) -> list[str]:
        seen = []
        for r in self.results:
            if r.variant not in seen:
                seen.append(r.variant)
        return seen

    def coverage_rate(self, variant: str, parameter: str) -> float:
        rs = [r for r in self.variant_results(variant) if not r.diverged]
        if not rs:
            return 0.0
        return sum(r.recovery(parameter).covered for r in rs) / len(rs)

    def posterior_means(self, variant: str, parameter: str) -> list[float]:
        return [
            r.recovery(parameter).posterior_mean
            for r in self.variant_results(variant)
            if not r.diverged
        ]

    def waic_wins(self) -> dict[str, int]:
        """Per-replication lowest-WAIC wins; exact ties are shared."""
        wins = {v: 0 for v in self.variants}
        for rep in range(self.replications):
            rep_results = [r for r in self.results if r.replication == rep]
            best = min(r.waic for r in rep_results)
            if math.isfinite(best):
                for r in rep_results:
                    if r.waic == best:
                        wins[r.variant] += 1
        return wins

    def divergence_count(self, variant: str) -> int:
        return sum(r.diverged for r in self.variant_results(variant))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.results:
            base = {
                "scenario": self.scenario, "variant": r.variant,
                "replication": r.replication, "waic": r.waic,
                "diverged": r.diverged, "max_rhat": r.max_rhat,
            }
            if not r.params:
                rows.append(base)
            for p in r.params:
                rows.append({
                    **base, "parameter": p.parameter, "true_value": p.true_value,
                    "posterior_mean": p.posterior_mean, "lower": p.lower,
                    "upper": p.upper, "covered": p.covered,
                })
        return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Generated:
    latent: np.ndarray
    observed_log: np.ndarray        # latent plus measurement noise (log scale)
    covariates: np.ndarray          # (T, k), concentration scale
    counts: np.ndarray | None       # weeks 2..T
    n: np.ndarray


def _generate(g: GeneratorSettings, rng: np.random.Generator) -> _Generated:
    ar = Ar1Params(phi=g.phi, var_ar=g.sigma_ar ** 2,
                   mean=MeanStructure.constant(g.latent_mean))
    n = np.broadcast_to(np.asarray(g.n_schedule, dtype=int), (g.T,)).copy()
    if g.sigma_obs is not None:
        noise = ObservationNoise(g.noise_mode, g.sigma_obs ** 2)
        sim = simulate_ar1(ar, noise, n, g.T, rng)
        latent, observed = sim.latent, sim.log_observed
    else:
        sim = simulate_ar1(ar, ObservationNoise("constant", 1e-12), n, g.T, rng)
        latent = sim.latent
        observed = latent.copy()
    k = len(g.covariate_coefs)
    covariates = np.exp(rng.standard_normal((g.T, k))) if k else np.empty((g.T, 0))
    counts = None
    if g.outcome:
        params = LinearPredictorParams(
            intercept=g.intercept, temperature=None,
            latent=g.latent_coef, covariates=g.covariate_coefs,
        )
        counts = simulate_outcome(
            params, None, covariates, latent, np.full(g.T, g.offset), rng
        )
    return _Generated(latent=latent, observed_log=observed, covariates=covariates,
                      counts=counts, n=n)


def _weeks_from(year: int, week: int, count: int) -> list[MmwrWeek]:
    out = [MmwrWeek.from_year_week(year, week)]
    while len(out) < count:
        out.append(out[-1].next)
    return out


def _assemble_dataset(g: GeneratorSettings, data: _Generated, scaling: str) -> WeeklyDataset:
    if scaling == "matched":
        level = np.exp(data.observed_log)
    else:
        level = np.maximum(data.observed_log, _MISMATCH_FLOOR)
    weeks = _weeks_from(2018, 1, g.T)
    counts_full = np.concatenate([[0], data.counts])
    rows = []
    for t in range(g.T):
        levels = {"x": float(level[t])}
        ndays = {"x": int(data.n[t])}
        for j in range(data.covariates.shape[1]):
            levels[f"c{j + 1}"] = float(data.covariates[t, j])
            ndays[f"c{j + 1}"] = 7
        rows.append(WeeklyObservation(
            week=weeks[t], pollutant_levels=levels, valid_day_counts=ndays,
            temperature_raw=0.0, deaths={"sim": int(counts_full[t])},
            population=g.offset,
        ))
    return WeeklyDataset.from_rows(rows)


def _truth_map(g: GeneratorSettings, variant: FitVariant | None) -> dict[str, float]:
    """Generating values keyed by the fitted parameter names."""
    sigma_obs_name = "sigma_x" if g.noise_mode == "scaled_by_n" else "sigma_v"
    if not g.outcome:
        out = {"mu": g.latent_mean, "phi": g.phi, "sigma_ar": g.sigma_ar}
        if g.sigma_obs is not None:
            out[sigma_obs_name] = g.sigma_obs
        return out
    out = {"beta0": g.intercept, "beta_x": g.latent_coef}
    for j, b in enumerate(g.covariate_coefs):
        out[f"beta_c{j + 1}"] = b
    if variant is not None and variant.me:
        out.update({"mu": g.latent_mean, "phi": g.phi, "sigma_ar": g.sigma_ar})
        if g.sigma_obs is not None:
            out[sigma_obs_name] = g.sigma_obs
    return out


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _score_fit(draws: PosteriorDraws, truth: Mapping[str, float],
               variant: str, rep: int) -> VariantResult:
    diag = diagnostics(draws)
    rhats = [p.rhat for p in diag.parameters if p.rhat is not None]
    max_rhat = max(rhats) if rhats else None
    diverged = max_rhat is not None and max_rhat > RHAT_DIVERGENCE
    params = []
    for name, true_value in truth.items():
        if name not in draws.names:
            continue
        mean, _, lo, _, hi = summarize(draws, name)
        params.append(ParamRecovery(name, float(true_value), mean, lo, hi))
    w = waic(draws.pointwise_loglik).waic if draws.pointwise_loglik.size else math.inf
    if not math.isfinite(w):
        diverged = True
        w = math.inf
    return VariantResult(variant=variant, replication=rep, waic=w,
                         params=tuple(params), diverged=diverged, max_rhat=max_rhat)


def _fit_seed(scenario_seed: int, rep: int, variant_index: int) -> int:
    return int(np.random.SeedSequence([scenario_seed, rep, variant_index]).generate_state(1)[0])


def _run_replication(scenario: Scenario, rep: int) -> list[VariantResult]:
    g = scenario.generator
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, rep]))
    data = _generate(g, rng)
    results = []
    for vi, variant in enumerate(scenario.variants):
        config = replace(scenario.sampler, seed=_fit_seed(scenario.seed, rep, vi), workers=1)
        truth = _truth_map(g, variant)
        try:
            if not g.outcome:
                draws = fit_series(
                    data.observed_log, data.n,
                    StateSpaceSpec(mean_kind="constant", noise_mode=g.noise_mode), config,
                )
            else:
                dataset = _assemble_dataset(g, data, variant.scaling)
                covs = tuple(f"c{j + 1}" for j in range(len(g.covariate_coefs)))
                if variant.me:
                    spec = OutcomeSpec(cause="sim", me_pollutant="x", covariates=covs,
                                       include_temperature=False)
                else:
                    spec = OutcomeSpec(cause="sim", me_pollutant=None,
                                       covariates=("x",) + covs, include_temperature=False)
                draws = fit(dataset, spec,
                            StateSpaceSpec(mean_kind="constant", noise_mode=g.noise_mode),
                            config)
            results.append(_score_fit(draws, truth, variant.name, rep))
        except AerostateError:
            # scored failure: the variant loses this replication outright
            results.append(VariantResult(variant=variant.name, replication=rep,
                                         waic=math.inf, params=(), diverged=True,
                                         max_rhat=None))
    return results


def run_scenario(scenario: Scenario, workers: int | None = None) -> RecoveryScore:
    """Run every replication and variant; deterministic under the scenario seed."""
    from .sampler import resolve_workers

    jobs = list(range(scenario.replications))
    nworkers = resolve_workers(workers, len(jobs))
    if nworkers > 1:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            chunks = list(pool.map(_run_replication, [scenario] * len(jobs), jobs))
    else:
        chunks = [_run_replication(scenario, rep) for rep in jobs]
    results = [r for chunk in chunks for r in chunk]
    return RecoveryScore(scenario=scenario.name, replications=scenario.replications,
                         results=tuple(results))


def compare_variants(scores: RecoveryScore | Sequence[RecoveryScore]) -> pd.DataFrame:
    """Rank variants by WAIC wins (ties shared, then broken by name)."""
    if isinstance(scores, RecoveryScore):
        scores = [scores]
    if not scores:
        raise ValidationError("nothing to compare")
    reps = {s.replications for s in scores}
    if len(reps) != 1:
        raise ValidationError(f"mismatched replication counts: {sorted(reps)}")
    rows = []
    for score in scores:
        wins = score.waic_wins()
        for variant in score.variants:
            finite = [r.waic for r in score.variant_results(variant) if math.isfinite(r.waic)]
            rows.append({
                "scenario": score.scenario,
                "variant": variant,
                "wins": wins[variant],
                "mean_waic": float(np.mean(finite)) if finite else math.inf,
                "divergences": score.divergence_count(variant),
            })
    frame = pd.DataFrame(rows)
    frame = frame.sort_values(
        by=["scenario", "wins", "variant"], ascending=[True, False, True], kind="stable"
    ).reset_index(drop=True)
    frame["rank"] = frame.groupby("scenario").cumcount() + 1
    return frame


# ---------------------------------------------------------------------------
# built-in scenarios
# ---------------------------------------------------------------------------

def _builtin() -> dict[str, Scenario]:
    fast = SamplerConfig(chains=2, iterations=2400, burn_in=900, thin=3)
    return {
        "ssm-basic": Scenario(
            name="ssm-basic",
            generator=GeneratorSettings(
                T=259, latent_mean=10.0, phi=0.7, sigma_ar=math.sqrt(0.5),
                sigma_obs=math.sqrt(0.9), noise_mode="constant", outcome=False,
            ),
            variants=(FitVariant(name="ar1-constant"),),
            replications=20, seed=1101, sampler=fast,
        ),
        "ssm-ragged": Scenario(
            name="ssm-ragged",
            generator=GeneratorSettings(
                T=259, latent_mean=10.0, phi=0.7, sigma_ar=math.sqrt(0.5),
                sigma_obs=1.5, noise_mode="scaled_by_n",
                n_schedule=(1, 2, 3, 4, 5, 6, 7), outcome=False,
            ),
            variants=(FitVariant(name="ar1-constant"),),
            replications=10, seed=1102, sampler=fast,
        ),
        "outcome-no-me": Scenario(
            name="outcome-no-me",
            generator=GeneratorSettings(
                T=259, latent_mean=6.0, phi=0.7, sigma_ar=math.sqrt(0.5),
                sigma_obs=None, noise_mode="scaled_by_n",
                intercept=10.0, latent_coef=-1.0, covariate_coefs=(),
            ),
            variants=(FitVariant(name="no-me", me=False), FitVariant(name="me", me=True)),
            replications=20, seed=1103, sampler=fast,
        ),
        "outcome-me-full": Scenario(
            name="outcome-me-full",
            generator=GeneratorSettings(
                T=259, latent_mean=10.0, phi=0.5, sigma_ar=2.0,
                sigma_obs=4.0, noise_mode="scaled_by_n",
                intercept=10.0, latent_coef=-1.0, covariate_coefs=(0.1, -0.5),
            ),
            variants=(FitVariant(name="me", me=True), FitVariant(name="no-me", me=False)),
            replications=20, seed=1104, sampler=fast,
        ),
        "outcome-scaling": Scenario(
            name="outcome-scaling",
            generator=GeneratorSettings(
                T=259, latent_mean=12.0, phi=0.5, sigma_ar=2.0,
                sigma_obs=4.0, noise_mode="scaled_by_n",
                intercept=12.0, latent_coef=-1.0, covariate_coefs=(0.1, -0.5),
            ),
            variants=(
                FitVariant(name="me-matched", me=True, scaling="matched"),
                FitVariant(name="me-log-mismatch", me=True, scaling="log_mismatch"),
            ),
            replications=10, seed=1105, sampler=fast,
        ),
    }


BUILTIN_SCENARIOS = _builtin()


def scenario_from_dict(raw: Mapping) -> Scenario:
    """Build a scenario from a parsed config mapping (see the CLI docs)."""
    try:
        gen = GeneratorSettings(**{
            **raw.get("generator", {}),
            "covariate_coefs": tuple(raw.get("generator", {}).get("covariate_coefs", ())),
        })
        variants = tuple(
            FitVariant(name=v["name"], me=v.get("me", True),
                       scaling=v.get("scaling", "matched"))
            for v in raw["variants"]
        )
        kwargs = dict(
            name=raw["name"],
            generator=gen,
            variants=variants,
            replications=int(raw.get("replications", 20)),
            seed=int(raw.get("seed", 0)),
        )
        if raw.get("sampler"):
            kwargs["sampler"] = SamplerConfig(**raw["sampler"])
        scenario = Scenario(**kwargs)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad scenario definition: {exc}") from None
    return scenario
