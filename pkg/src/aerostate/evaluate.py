"""Model scoring and reporting: WAIC, posterior summaries, effect tables.

WAIC here always scores the count channel only (one point per outcome
week), so measurement-error and plug-in variants of the same outcome model
are compared on identical data.  Effects are reported multiplicatively:
per +1 degree C for temperature, per +10 percent for pollutants.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .errors import ValidationError
from .sampler import DiagnosticsReport, PosteriorDraws

HIGH_PWAIC_POINT = 0.4  # per-point variance above this makes WAIC unreliable
NULL_MULTIPLIER = 1.0
TEN_PCT_FACTOR = 1.1


@dataclass(frozen=True)
class WaicReport:
    lppd: float
    p_waic: float
    waic: float
    pointwise_lppd: np.ndarray
    pointwise_p: np.ndarray
    flagged_points: tuple[int, ...]

    @property
    def n_points(self) -> int:
        return self.pointwise_lppd.size


def waic(pointwise_loglik: np.ndarray) -> WaicReport:
    """Watanabe information criterion from a (draws x points) log-lik matrix.

    Points whose variance term exceeds 0.4 are flagged with a warning; the
    computation still completes.
    """
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2 or ll.shape[1] < 1:
        raise ValidationError("need a 2-D matrix with >= 2 draws and >= 1 point")
    if not np.all(np.isfinite(ll)):
        raise ValidationError("pointwise log-likelihood contains non-finite values")
    s = ll.shape[0]
    lppd_i = logsumexp(ll, axis=0) - np.log(s)
    p_i = np.var(ll, axis=0, ddof=1)
    flagged = tuple(int(i) for i in np.nonzero(p_i > HIGH_PWAIC_POINT)[0])
    if flagged:
        warnings.warn(
            f"{len(flagged)} point(s) have p_waic contributions > {HIGH_PWAIC_POINT}; "
            "WAIC may be unreliable",
            RuntimeWarning,
            stacklevel=2,
        )
    lppd = float(np.sum(lppd_i))
    p_waic = float(np.sum(p_i))
    return WaicReport(
        lppd=lppd,
        p_waic=p_waic,
        waic=-2.0 * (lppd - p_waic),
        pointwise_lppd=lppd_i,
        pointwise_p=p_i,
        flagged_points=flagged,
    )


def summarize(draws, parameter: str | None = None) -> tuple[float, float, float, float, float]:
    """(mean, sd, 2.5%, 50%, 97.5%) of one parameter's retained draws."""
    if parameter is not None:
        values = draws.parameter(parameter)
    else:
        values = np.asarray(draws, dtype=float)
    if values.size < 10:
        raise ValidationError(f"need at least 10 retained draws, got {values.size}")
    q = np.percentile(values, [2.5, 50.0, 97.5], method="linear")
    return (
        float(np.mean(values)),
        float(np.std(values, ddof=1)),
        float(q[0]),
        float(q[1]),
        float(q[2]),
    )


# ---------------------------------------------------------------------------
# effect tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EffectRow:
    predictor: str
    unit: str              # 'per 1 degree C' or 'per +10%'
    multiplier: float
    lower: float
    upper: float
    pct_change: float
    pct_lower: float
    pct_upper: float
    significant: bool


@dataclass(frozen=True)
class EffectTable:
    rows: tuple[EffectRow, ...]

    def __getitem__(self, predictor: str) -> EffectRow:
        for row in self.rows:
            if row.predictor == predictor:
                return row
        raise KeyError(predictor)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.__dict__ for row in self.rows])


def _effect_row(name: str, unit: str, coef: np.ndarray, base: float) -> EffectRow:
    """Transform coefficient draws into a multiplicative-effect row.

    `base` is the factor whose power the coefficient takes: e for
    temperature (per-degree), 1.1 for logged pollutants (per +10%).
    The interval endpoints are the transformed coefficient percentiles,
    which is exact because the map is monotone.
    """
    mean = float(np.mean(coef))
    lo, hi = np.percentile(coef, [2.5, 97.5], method="linear")
    mult = base ** mean
    mlo, mhi = base ** lo, base ** hi
    return EffectRow(
        predictor=name,
        unit=unit,
        multiplier=mult,
        lower=float(mlo),
        upper=float(mhi),
        pct_change=(mult - 1.0) * 100.0,
        pct_lower=(float(mlo) - 1.0) * 100.0,
        pct_upper=(float(mhi) - 1.0) * 100.0,
        significant=not (mlo <= NULL_MULTIPLIER <= mhi),
    )


def effect_table(draws: PosteriorDraws, outcome_spec) -> EffectTable:
    """Multiplicative effect summary for every predictor in the fit."""
    rows = []
    if outcome_spec.include_temperature:
        rows.append(_effect_row("temperature", "per 1 degree C",
                                draws.parameter("beta_temp"), np.e))
    if outcome_spec.me_pollutant is not None:
        rows.append(_effect_row(outcome_spec.me_pollutant, "per +10%",
                                draws.parameter("beta_x"), TEN_PCT_FACTOR))
    for cov in outcome_spec.covariates:
        rows.append(_effect_row(cov, "per +10%",
                                draws.parameter(f"beta_{cov}"), TEN_PCT_FACTOR))
    return EffectTable(rows=tuple(rows))


def format_effect_table(table: EffectTable) -> str:
    lines = [
        f"{'predictor':<14} {'unit':<16} {'multiplier':>10} {'95% CI':>20} "
        f"{'% change':>9} {'signif':>7}"
    ]
    for r in table.rows:
        ci = f"[{r.lower:.4f}, {r.upper:.4f}]"
        lines.append(
            f"{r.predictor:<14} {r.unit:<16} {r.multiplier:>10.4f} {ci:>20} "
            f"{r.pct_change:>8.2f}% {'yes' if r.significant else 'no':>7}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def effect_curve(coef: np.ndarray, kind: str, deltas: np.ndarray) -> pd.DataFrame:
    """Percent change in expected deaths over a grid of predictor changes.

    kind 'degrees': delta is in degrees C, multiplier exp(beta * delta).
    kind 'percent': delta is the percent change in the pollutant level,
    multiplier (1 + delta/100)^beta.
    """
    if kind not in ("degrees", "percent"):
        raise ValidationError(f"unknown curve kind {kind!r}")
    rows = []
    for d in deltas:
        if kind == "degrees":
            factor = np.exp(coef * d)
        else:
            factor = (1.0 + d / 100.0) ** coef
        mean = float(np.mean(factor))
        lo, hi = np.percentile(factor, [2.5, 97.5], method="linear")
        rows.append({
            "delta": float(d),
            "pct_change_mean": (mean - 1.0) * 100.0,
            "pct_change_lower": (float(lo) - 1.0) * 100.0,
            "pct_change_upper": (float(hi) - 1.0) * 100.0,
        })
    return pd.DataFrame(rows)


def write_reports(draws: PosteriorDraws, outcome_spec, out_dir,
                  diag: DiagnosticsReport | None = None) -> WaicReport:
    """Emit effects.csv, waic.csv, diagnostics.csv, and per-predictor curves."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    table = effect_table(draws, outcome_spec)
    table.to_frame().to_csv(out / "effects.csv", index=False)

    report = waic(draws.pointwise_loglik)
    pd.DataFrame([{
        "lppd": report.lppd,
        "p_waic": report.p_waic,
        "waic": report.waic,
        "n_points": report.n_points,
        "n_flagged_points": len(report.flagged_points),
    }]).to_csv(out / "waic.csv", index=False)

    if diag is not None:
        rows = []
        for p in diag.parameters:
            mean, sd, lo, med, hi = summarize(draws, p.name)
            rows.append({
                "parameter": p.name, "rhat": p.rhat, "ess": p.ess,
                "mean": mean, "sd": sd, "q2.5": lo, "q50": med, "q97.5": hi,
                "flagged": p.flagged,
            })
        pd.DataFrame(rows).to_csv(out / "diagnostics.csv", index=False)

    if outcome_spec.include_temperature:
        grid = np.linspace(-5.0, 5.0, 41)
        effect_curve(draws.parameter("beta_temp"), "degrees", grid).to_csv(
            out / "curve_temperature.csv", index=False
        )
    pollutant_coefs = {}
    if outcome_spec.me_pollutant is not None:
        pollutant_coefs[outcome_spec.me_pollutant] = draws.parameter("beta_x")
    for cov in outcome_spec.covariates:
        pollutant_coefs[cov] = draws.parameter(f"beta_{cov}")
    grid = np.linspace(-50.0, 50.0, 41)
    for name, coef in pollutant_coefs.items():
        effect_curve(coef, "percent", grid).to_csv(
            out / f"curve_{name}.csv", index=False
        )
    return report
