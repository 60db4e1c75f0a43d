"""Command-line front end.

Subcommands:

    ingest    raw CSVs -> weekly dataset dump plus a drop report
    fit       dataset dump -> posterior draws and report files
    compare   rank completed fits of the same outcome by WAIC
    simulate  run a named or file-defined recovery scenario
    report    regenerate report files from a fit directory

Runs are driven by a YAML config (see README); command-line flags override
config values.  The AEROSTATE_THREADS environment variable caps worker
processes everywhere.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import evaluate, ingest, simstudy
from .errors import AerostateError, ConfigError
from .outcome import OutcomeSpec, PriorSpec
from .sampler import (
    PosteriorDraws,
    SamplerConfig,
    diagnostics,
    export_draws_csv,
    export_pointwise_csv,
    fit,
    read_draws_csv,
)
from .statespace import StateSpaceSpec

RHAT_WARN = 1.05


def _load_config(path: str | None) -> dict:
    if path is None:
        raise ConfigError("this command needs --config")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    with p.open() as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {p} must hold a mapping")
    return raw


def _as_date(value, what: str) -> datetime.date:
    if isinstance(value, datetime.date):
        return value
    try:
        return datetime.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{what} must be an ISO date, got {value!r}") from None


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} file {p} does not exist")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _outcome_spec_from(cfg: dict) -> OutcomeSpec:
    outcome = cfg.get("outcome")
    if not outcome or "cause" not in outcome:
        raise ConfigError("config needs an outcome section with at least a cause")
    prior_cfg = dict(cfg.get("priors", {}))
    if "prior_scale_is_variance" in prior_cfg:
        prior_cfg["scale_is_variance"] = bool(prior_cfg.pop("prior_scale_is_variance"))
    priors = PriorSpec(**prior_cfg)
    return OutcomeSpec(
        cause=outcome["cause"],
        me_pollutant=outcome.get("me_pollutant"),
        covariates=tuple(outcome.get("covariates", ())),
        include_temperature=bool(outcome.get("include_temperature", True)),
        priors=priors,
    )


def _sampler_config_from(cfg: dict, args) -> SamplerConfig:
    sampler = dict(cfg.get("sampler", {}))
    for flag, key in (("seed", "seed"), ("chains", "chains"), ("iterations", "iterations"),
                      ("burn_in", "burn_in"), ("thin", "thin")):
        value = getattr(args, flag, None)
        if value is not None:
            sampler[key] = value
    return SamplerConfig(**sampler)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = _load_config(args.config)
    section = cfg.get("ingest")
    if not section:
        raise ConfigError("config needs an ingest section")
    for key in ("pollutants", "temperature", "deaths", "population", "span"):
        if key not in section:
            raise ConfigError(f"ingest section is missing {key!r}")
    pollutant_files = [_require_file(p, "pollutant") for p in section["pollutants"]]
    span = (
        _as_date(section["span"]["start"], "span start"),
        _as_date(section["span"]["end"], "span end"),
    )
    result = ingest.build_dataset(
        pollutant_files,
        _require_file(section["temperature"], "temperature"),
        _require_file(section["deaths"], "deaths"),
        _require_file(section["population"], "population"),
        span,
    )
    out = Path(args.out or cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    ingest.write_dataset_csv(result.dataset, out / "dataset.csv")
    with (out / "drop_report.txt").open("w") as fh:
        if result.dropped:
            for d in result.dropped:
                fh.write(f"{d}\n")
        else:
            fh.write("no weeks dropped\n")
    print(f"wrote {result.dataset.n_weeks} weeks to {out / 'dataset.csv'}")
    print(f"dropped {len(result.dropped)} week(s); see {out / 'drop_report.txt'}")
    return 0


def _write_fit_outputs(draws: PosteriorDraws, spec: OutcomeSpec, out: Path,
                       meta: dict) -> bool:
    """Write all fit artifacts; returns True when any R-hat exceeds the gate."""
    out.mkdir(parents=True, exist_ok=True)
    export_draws_csv(draws, out / "draws.csv")
    export_pointwise_csv(draws, out / "pointwise_loglik.csv")
    diag = diagnostics(draws)
    evaluate.write_reports(draws, spec, out, diag=diag)
    with (out / "run_meta.yaml").open("w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=True)
    table = evaluate.effect_table(draws, spec)
    print(evaluate.format_effect_table(table))
    flagged = [p for p in diag.parameters if p.rhat is not None and p.rhat > RHAT_WARN]
    if flagged:
        worst = max(p.rhat for p in flagged)
        print(f"WARN: {len(flagged)} parameter(s) with R-hat > {RHAT_WARN} (worst {worst:.3f})")
    return bool(flagged)


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    data = cfg.get("data", {})
    if "dataset" not in data:
        raise ConfigError("config needs data.dataset (an ingest dump)")
    dataset_path = _require_file(data["dataset"], "dataset")
    dataset = ingest.read_dataset_csv(dataset_path)
    spec = _outcome_spec_from(cfg)
    ss_cfg = cfg.get("statespace", {})
    ss_spec = StateSpaceSpec(
        mean_kind=ss_cfg.get("mean", "constant"),
        noise_mode=ss_cfg.get("noise", "scaled_by_n"),
    )
    config = _sampler_config_from(cfg, args)
    out = Path(args.out or cfg.get("out", "."))

    draws = fit(dataset, spec, ss_spec, config)
    meta = {
        "dataset": str(dataset_path),
        "dataset_sha256": _sha256(dataset_path),
        "cause": spec.cause,
        "variant": draws.variant,
        "me_pollutant": spec.me_pollutant,
        "covariates": list(spec.covariates),
        "include_temperature": spec.include_temperature,
        "seed": config.seed,
        "label": cfg.get("label", out.name),
    }
    any_flagged = _write_fit_outputs(draws, spec, out, meta)
    if any_flagged and args.strict:
        print("strict mode: failing on R-hat gate", file=sys.stderr)
        return 1
    return 0


def cmd_compare(args) -> int:
    if len(args.fit_dirs) < 2:
        raise ConfigError("compare needs at least two fit directories")
    entries = []
    for d in args.fit_dirs:
        path = Path(d)
        meta_path = path / "run_meta.yaml"
        if not meta_path.exists():
            raise ConfigError(f"{path} has no run_meta.yaml; not a fit directory")
        with meta_path.open() as fh:
            meta = yaml.safe_load(fh)
        waic_frame = pd.read_csv(path / "waic.csv")
        effects = pd.read_csv(path / "effects.csv")
        entries.append((path, meta, waic_frame, effects))

    datasets = {(e[1]["dataset_sha256"], e[1]["cause"]) for e in entries}
    if len(datasets) != 1:
        descr = ", ".join(f"{e[1]['label']}({e[1]['cause']})" for e in entries)
        print(
            "refusing to compare fits of different datasets or causes: " + descr,
            file=sys.stderr,
        )
        return 1

    rows = []
    for path, meta, waic_frame, effects in entries:
        marks = []
        for _, r in effects.iterrows():
            if r["significant"]:
                marks.append(f"{r['predictor']}{'+' if r['multiplier'] > 1 else '-'}")
        rows.append({
            "label": meta.get("label", path.name),
            "variant": meta.get("variant", ""),
            "waic": float(waic_frame["waic"].iloc[0]),
            "significant_predictors": " ".join(marks) if marks else "/",
        })
    frame = pd.DataFrame(rows).sort_values(
        by=["waic", "label"], kind="stable"
    ).reset_index(drop=True)
    ties = frame["waic"].duplicated(keep=False)
    if ties.any():
        frame.loc[ties, "significant_predictors"] += "  (waic tie)"
    print(frame.to_string(index=False))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out / "comparison.csv", index=False)
    return 0


def cmd_simulate(args) -> int:
    name = args.scenario
    if name in simstudy.BUILTIN_SCENARIOS:
        scenario = simstudy.BUILTIN_SCENARIOS[name]
    elif Path(name).exists():
        with Path(name).open() as fh:
            scenario = simstudy.scenario_from_dict(yaml.safe_load(fh))
    else:
        listing = ", ".join(sorted(simstudy.BUILTIN_SCENARIOS))
        print(f"unknown scenario {name!r}; built-ins: {listing}", file=sys.stderr)
        return 1
    if args.replications is not None:
        scenario = replace(scenario, replications=args.replications)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)

    score = simstudy.run_scenario(scenario)
    out = Path(args.out or f"scenario-{scenario.name}")
    out.mkdir(parents=True, exist_ok=True)
    score.to_frame().to_csv(out / "scores.csv", index=False)
    ranking = simstudy.compare_variants(score)
    ranking.to_csv(out / "ranking.csv", index=False)

    lines = [f"scenario {scenario.name}: {scenario.replications} replication(s)"]
    for variant in score.variants:
        results = score.variant_results(variant)
        diverged = score.divergence_count(variant)
        lines.append(f"  variant {variant}: {diverged} divergence(s)")
        params = results[0].params if results and results[0].params else ()
        for p in params:
            rate = score.coverage_rate(variant, p.parameter)
            means = score.posterior_means(variant, p.parameter)
            lines.append(
                f"    {p.parameter}: true {p.true_value:+.4g}, "
                f"coverage {rate:.0%}, mean of means {np.mean(means):+.4g}"
            )
    wins = score.waic_wins()
    if len(score.variants) > 1:
        lines.append("  WAIC wins: " + ", ".join(f"{v}={wins[v]}" for v in score.variants))
    summary = "\n".join(lines)
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    return 0


def cmd_report(args) -> int:
    path = Path(args.fit_dir)
    meta_path = path / "run_meta.yaml"
    if not meta_path.exists():
        raise ConfigError(f"{path} has no run_meta.yaml; not a fit directory")
    with meta_path.open() as fh:
        meta = yaml.safe_load(fh)
    draws = read_draws_csv(path / "draws.csv", path / "pointwise_loglik.csv")
    spec = OutcomeSpec(
        cause=meta["cause"],
        me_pollutant=meta.get("me_pollutant"),
        covariates=tuple(meta.get("covariates", ())),
        include_temperature=bool(meta.get("include_temperature", True)),
    )
    out = Path(args.out or path)
    diag = diagnostics(draws) if draws.n_chains >= 2 else None
    evaluate.write_reports(draws, spec, out, diag=diag)
    print(evaluate.format_effect_table(evaluate.effect_table(draws, spec)))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aerostate",
        description="Weekly air-pollution exposure and mortality modeling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="build the weekly dataset from raw CSVs")
    p_ingest.add_argument("--config", required=True, help="YAML run config")
    p_ingest.add_argument("--out", help="output directory (overrides config)")
    p_ingest.set_defaults(func=cmd_ingest)

    p_fit = sub.add_parser("fit", help="sample the posterior for one outcome")
    p_fit.add_argument("--config", required=True, help="YAML run config")
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--chains", type=int)
    p_fit.add_argument("--iterations", type=int)
    p_fit.add_argument("--burn-in", dest="burn_in", type=int)
    p_fit.add_argument("--thin", type=int)
    p_fit.add_argument("--strict", action="store_true",
                       help="exit nonzero when any R-hat exceeds 1.05")
    p_fit.add_argument("--out", help="output directory (overrides config)")
    p_fit.set_defaults(func=cmd_fit)

    p_cmp = sub.add_parser("compare", help="rank fits of the same outcome by WAIC")
    p_cmp.add_argument("fit_dirs", nargs="+", help="completed fit output directories")
    p_cmp.add_argument("--out", help="directory for comparison.csv")
    p_cmp.set_defaults(func=cmd_compare)

    p_sim = sub.add_parser("simulate", help="run a recovery scenario")
    p_sim.add_argument("scenario", help="built-in scenario name or YAML file")
    p_sim.add_argument("--replications", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out", help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="regenerate reports from a fit directory")
    p_rep.add_argument("fit_dir")
    p_rep.add_argument("--out", help="output directory (defaults to the fit directory)")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AerostateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
