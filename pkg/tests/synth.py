"""Synthetic source-file generators shared by the ingest and CLI tests."""

from __future__ import annotations

import csv
import datetime
from pathlib import Path

import numpy as np

from aerostate.mmwr import weeks_covering

PAPER_SPAN = (datetime.date(2018, 1, 1), datetime.date(2022, 12, 17))
DEFAULT_POLLUTANTS = ("o3", "pm10", "so2")
DEFAULT_CAUSES = ("copd", "pneumonia")


def write_source_files(
    out_dir: Path,
    span=PAPER_SPAN,
    pollutants=DEFAULT_POLLUTANTS,
    causes=DEFAULT_CAUSES,
    stations=3,
    seed=0,
    skip_pollutant_dates=(),
    skip_temperature_dates=(),
    skip_death_weeks=(),
) -> dict[str, Path]:
    """Write a complete, consistent set of raw CSVs covering the span.

    Every pollutant gets `stations` readings per day; optional skip sets
    knock out whole days or weeks to exercise drop handling.
    """
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start, end = span
    days = [start + datetime.timedelta(days=i) for i in range((end - start).days + 1)]
    weeks = weeks_covering(start, end)

    pollutant_path = out_dir / "pollutants.csv"
    with pollutant_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "station_id", "pollutant", "value"])
        for day in days:
            if day in set(skip_pollutant_dates):
                continue
            doy = day.timetuple().tm_yday
            for p_i, pollutant in enumerate(pollutants):
                base = 10.0 + 3.0 * p_i + 2.0 * np.sin(2 * np.pi * doy / 365.25)
                for s in range(stations):
                    value = max(0.01, base + rng.normal(0, 0.8))
                    writer.writerow([day.isoformat(), f"st{s:02d}", pollutant, f"{value:.4f}"])

    temperature_path = out_dir / "temperature.csv"
    with temperature_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "tavg_c"])
        for day in days:
            if day in set(skip_temperature_dates):
                continue
            doy = day.timetuple().tm_yday
            value = 17.0 - 7.0 * np.cos(2 * np.pi * (doy - 15) / 365.25) + rng.normal(0, 1.5)
            writer.writerow([day.isoformat(), f"{value:.3f}"])

    deaths_path = out_dir / "deaths.csv"
    skip_weeks = {(w.year, w.week) for w in skip_death_weeks}
    with deaths_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mmwr_year", "mmwr_week", "cause", "count"])
        for week in weeks:
            if (week.year, week.week) in skip_weeks:
                continue
            for c_i, cause in enumerate(causes):
                count = int(rng.poisson(40 + 5 * c_i))
                writer.writerow([week.year, week.week, cause, count])

    population_path = out_dir / "population.csv"
    with population_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "population"])
        for year in range(start.year - 1, end.year + 2):
            writer.writerow([year, f"{1.0e7 + 2.0e4 * (year - start.year):.1f}"])

    return {
        "pollutants": pollutant_path,
        "temperature": temperature_path,
        "deaths": deaths_path,
        "population": population_path,
    }
