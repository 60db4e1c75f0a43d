"""Build a weekly modeling table from raw daily/annual source files.

Aggregation is two-stage: station readings are averaged within each day,
then daily values are averaged within each MMWR week over the days that
fall inside the study span.  Weekly population comes from a straight-line
fit to annual totals, evaluated at each week's midpoint.

Expected file layouts (CSV with header):

    pollutants:   date,station_id,pollutant,value
    temperature:  date,tavg_c
    deaths:       mmwr_year,mmwr_week,cause,count
    population:   year,population
"""

from __future__ import annotations

import csv
import datetime
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dataset import WeeklyDataset, WeeklyObservation
from .errors import DataError, SchemaError, ValidationError
from .mmwr import MmwrWeek, weeks_covering

PathLike = str | Path


@dataclass(frozen=True)
class DailyPollutantRecord:
    date: datetime.date
    station_id: str
    pollutant_id: str
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValidationError(
                f"concentration must be finite and nonnegative, got {self.value}"
            )


@dataclass(frozen=True)
class AnnualPopulationRecord:
    year: int
    population: float

    def __post_init__(self):
        if not (self.population > 0):
            raise ValidationError(f"population must be positive, got {self.population}")


@dataclass(frozen=True)
class DroppedWeek:
    week: MmwrWeek
    reasons: tuple[str, ...]

    def __str__(self):
        return f"{self.week}: {', '.join(self.reasons)}"


@dataclass(frozen=True)
class BuildResult:
    dataset: WeeklyDataset
    dropped: tuple[DroppedWeek, ...]


# ---------------------------------------------------------------------------
# aggregation primitives
# ---------------------------------------------------------------------------

def daily_average(
    records_for_day: Sequence[DailyPollutantRecord],
) -> tuple[float, int] | None:
    """Average all station readings of one pollutant on one day.

    Returns (mean, station count), or None when no stations reported.
    """
    if not records_for_day:
        return None
    first = records_for_day[0]
    for r in records_for_day:
        if r.pollutant_id != first.pollutant_id:
            raise ValidationError(
                f"mixed pollutants in one daily group: {first.pollutant_id} vs {r.pollutant_id}"
            )
        if r.date != first.date:
            raise ValidationError(f"mixed dates in one daily group: {first.date} vs {r.date}")
    n = len(records_for_day)
    return math.fsum(r.value for r in records_for_day) / n, n


def weekly_average(
    daily_values: Mapping[datetime.date, float],
    week: MmwrWeek,
    study_start: datetime.date,
) -> tuple[float, int] | None:
    """Average the daily values of one MMWR week.

    Only days on or after `study_start` that actually have a daily value
    count; returns (mean, valid-day count), or None when the week has no
    valid days.
    """
    vals = [
        daily_values[d]
        for d in week.days()
        if d >= study_start and d in daily_values
    ]
    if not vals:
        return None
    return math.fsum(vals) / len(vals), len(vals)


def fit_population_line(
    annual: Sequence[AnnualPopulationRecord],
) -> tuple[float, float]:
    """Least-squares line population = b0 + b1 * year; returns (b0, b1)."""
    if len(annual) < 2:
        raise DataError("population regression needs at least 2 annual records")
    xs = [float(r.year) for r in annual]
    ys = [float(r.population) for r in annual]
    n = len(xs)
    sx = math.fsum(xs)
    sy = math.fsum(ys)
    xbar, ybar = sx / n, sy / n
    sxx = math.fsum((x - xbar) ** 2 for x in xs)
    sxy = math.fsum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    if sxx == 0.0:
        raise DataError("population regression is degenerate: all years identical")
    slope = sxy / sxx
    return ybar - slope * xbar, slope


def _fractional_year(d: datetime.date) -> float:
    y0 = datetime.date(d.year, 1, 1).toordinal()
    y1 = datetime.date(d.year + 1, 1, 1).toordinal()
    return d.year + (d.toordinal() - y0) / (y1 - y0)


def weekly_population(line: tuple[float, float], week: MmwrWeek) -> float:
    """Evaluate the population line at the week midpoint (its Wednesday)."""
    b0, b1 = line
    midpoint = week.start_date + datetime.timedelta(days=3)
    value = b0 + b1 * _fractional_year(midpoint)
    if not (value > 0):
        raise DataError(f"population line predicts nonpositive value {value} at {week}")
    return value


# ---------------------------------------------------------------------------
# file parsing
# ---------------------------------------------------------------------------

def _open_reader(path: PathLike, expected_header: list[str]):
    path = Path(path)
    fh = path.open(newline="")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise SchemaError("file is empty", str(path), 1)
    if [h.strip() for h in header] != expected_header:
        fh.close()
        raise SchemaError(
            f"expected header {','.join(expected_header)!r}, got {','.join(header)!r}",
            str(path),
            1,
        )
    return fh, reader


def _parse_date(text: str, path: str, line: int) -> datetime.date:
    try:
        return datetime.date.fromisoformat(text.strip())
    except ValueError:
        raise SchemaError(f"bad ISO date {text!r}", path, line) from None


def _parse_float(text: str, path: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"bad number {text!r}", path, line) from None


def _parse_int(text: str, path: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise SchemaError(f"bad integer {text!r}", path, line) from None


def parse_pollutant_csv(path: PathLike) -> list[DailyPollutantRecord]:
    fh, reader = _open_reader(path, ["date", "station_id", "pollutant", "value"])
    records = []
    with fh:
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SchemaError(f"expected 4 fields, got {len(row)}", str(path), i)
            d = _parse_date(row[0], str(path), i)
            value = _parse_float(row[3], str(path), i)
            try:
                records.append(DailyPollutantRecord(d, row[1].strip(), row[2].strip(), value))
            except ValidationError as exc:
                raise SchemaError(str(exc), str(path), i) from None
    return records


def parse_temperature_csv(path: PathLike) -> dict[datetime.date, float]:
    fh, reader = _open_reader(path, ["date", "tavg_c"])
    out: dict[datetime.date, float] = {}
    with fh:
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise SchemaError(f"expected 2 fields, got {len(row)}", str(path), i)
            d = _parse_date(row[0], str(path), i)
            v = _parse_float(row[1], str(path), i)
            if not math.isfinite(v):
                raise SchemaError(f"non-finite temperature {row[1]!r}", str(path), i)
            if d in out:
                raise SchemaError(f"duplicate date {d}", str(path), i)
            out[d] = v
    return out


def parse_deaths_csv(path: PathLike) -> dict[tuple[int, int, str], int]:
    fh, reader = _open_reader(path, ["mmwr_year", "mmwr_week", "cause", "count"])
    out: dict[tuple[int, int, str], int] = {}
    with fh:
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SchemaError(f"expected 4 fields, got {len(row)}", str(path), i)
            year = _parse_int(row[0], str(path), i)
            week = _parse_int(row[1], str(path), i)
            count = _parse_int(row[3], str(path), i)
            if count < 0:
                raise SchemaError(f"negative death count {count}", str(path), i)
            key = (year, week, row[2].strip())
            if key in out:
                raise SchemaError(f"duplicate week/cause row {key}", str(path), i)
            out[key] = count
    return out


def parse_population_csv(path: PathLike) -> list[AnnualPopulationRecord]:
    fh, reader = _open_reader(path, ["year", "population"])
    records: list[AnnualPopulationRecord] = []
    with fh:
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise SchemaError(f"expected 2 fields, got {len(row)}", str(path), i)
            year = _parse_int(row[0], str(path), i)
            pop = _parse_float(row[1], str(path), i)
            if records and year <= records[-1].year:
                raise SchemaError(f"years must be strictly increasing, got {year}", str(path), i)
            try:
                records.append(AnnualPopulationRecord(year, pop))
            except ValidationError as exc:
                raise SchemaError(str(exc), str(path), i) from None
    return records


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def _daily_means(
    records: Iterable[DailyPollutantRecord],
    span: tuple[datetime.date, datetime.date],
) -> dict[str, dict[datetime.date, float]]:
    start, end = span
    grouped: dict[tuple[str, datetime.date], list[DailyPollutantRecord]] = {}
    for r in records:
        if start <= r.date <= end:
            grouped.setdefault((r.pollutant_id, r.date), []).append(r)
    out: dict[str, dict[datetime.date, float]] = {}
    for (pollutant, day), recs in grouped.items():
        mean, _ = daily_average(recs)
        out.setdefault(pollutant, {})[day] = mean
    return out


def build_dataset(
    pollutant_files: Sequence[PathLike],
    temperature_file: PathLike,
    deaths_file: PathLike,
    population_file: PathLike,
    span: tuple[datetime.date, datetime.date],
) -> BuildResult:
    """Assemble one validated weekly table from the source files.

    Every MMWR week overlapping `span` yields a row unless any pollutant,
    the temperature, or any death series is absent for it; such weeks are
    dropped and reported.  If drops fragment the span, only the longest
    consecutive run of surviving weeks is kept (the rest is reported too),
    since the model requires gap-free weeks.
    """
    start, end = span
    weeks = weeks_covering(start, end)
    if len(weeks) < 3:
        raise ValidationError(f"span covers only {len(weeks)} weeks; need at least 3")

    records: list[DailyPollutantRecord] = []
    for f in pollutant_files:
        records.extend(parse_pollutant_csv(f))
    if not records:
        raise DataError("no pollutant records found in the given span")
    by_pollutant = _daily_means(records, span)
    pollutants = sorted(by_pollutant)

    temperature = {
        d: v for d, v in parse_temperature_csv(temperature_file).items() if start <= d <= end
    }
    deaths = parse_deaths_csv(deaths_file)
    causes = sorted({cause for (_, _, cause) in deaths})
    if not causes:
        raise DataError("deaths file has no rows")
    pop_line = fit_population_line(parse_population_csv(population_file))

    candidates: list[WeeklyObservation] = []
    dropped: list[DroppedWeek] = []
    kept_weeks: list[MmwrWeek] = []
    for week in weeks:
        reasons = []
        levels: dict[str, float] = {}
        ndays: dict[str, int] = {}
        for p in pollutants:
            agg = weekly_average(by_pollutant[p], week, start)
            if agg is None:
                reasons.append(f"no {p} measurements")
            else:
                levels[p], ndays[p] = agg
        temp = weekly_average(temperature, week, start)
        if temp is None:
            reasons.append("no temperature")
        counts: dict[str, int] = {}
        for cause in causes:
            key = (week.year, week.week, cause)
            if key not in deaths:
                reasons.append(f"no {cause} deaths")
            else:
                counts[cause] = deaths[key]
        if reasons:
            dropped.append(DroppedWeek(week, tuple(reasons)))
            continue
        candidates.append(
            WeeklyObservation(
                week=week,
                pollutant_levels=levels,
                valid_day_counts=ndays,
                temperature_raw=temp[0],
                deaths=counts,
                population=weekly_population(pop_line, week),
            )
        )
        kept_weeks.append(week)

    if not candidates:
        raise DataError("no week in the span has complete data")

    run = _longest_consecutive_run(candidates)
    in_run = {obs.week for obs in run}
    for obs in candidates:
        if obs.week not in in_run:
            dropped.append(DroppedWeek(obs.week, ("outside the longest gap-free run",)))
    dropped.sort(key=lambda d: d.week)

    return BuildResult(WeeklyDataset.from_rows(run), tuple(dropped))


def _longest_consecutive_run(rows: list[WeeklyObservation]) -> list[WeeklyObservation]:
    best: list[WeeklyObservation] = []
    current: list[WeeklyObservation] = []
    for obs in rows:
        if current and obs.week != current[-1].week.next:
            current = []
        current.append(obs)
        if len(current) > len(best):
            best = current
    return best


# ---------------------------------------------------------------------------
# dataset dump round trip
# ---------------------------------------------------------------------------

def dump_columns(dataset: WeeklyDataset) -> list[str]:
    cols = ["mmwr_year", "mmwr_week"]
    for p in dataset.pollutants:
        cols.extend([p, f"{p}_n"])
    cols.extend(["temp_centered", "offset"])
    cols.extend(dataset.causes)
    return cols


def write_dataset_csv(dataset: WeeklyDataset, path: PathLike) -> None:
    """Write the weekly table; full float precision so rereads are exact."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dump_columns(dataset))
        for row in dataset.rows:
            out: list = [row.week.year, row.week.week]
            for p in dataset.pollutants:
                out.append(repr(row.pollutant_levels[p]))
                out.append(row.valid_day_counts[p])
            out.append(repr(row.temperature_raw - dataset.temperature_mean))
            out.append(repr(row.population))
            for c in dataset.causes:
                out.append(row.deaths[c])
            writer.writerow(out)


def read_dataset_csv(path: PathLike) -> WeeklyDataset:
    """Load a dumped weekly table.

    The dump stores centered temperature, so the reloaded dataset carries a
    centering constant of (numerically) zero; recentering is a no-op.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("file is empty", str(path), 1) from None
        fixed = {"mmwr_year", "mmwr_week", "temp_centered", "offset"}
        if not fixed.issubset(header):
            raise SchemaError(f"missing required columns {sorted(fixed - set(header))}", str(path), 1)
        pollutants = [
            c for c in header
            if c not in fixed and not c.endswith("_n") and f"{c}_n" in header
        ]
        causes = [
            c for c in header
            if c not in fixed and c not in pollutants and not c.endswith("_n")
        ]
        idx = {c: header.index(c) for c in header}
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(row)}", str(path), i)
            year = _parse_int(row[idx["mmwr_year"]], str(path), i)
            week = _parse_int(row[idx["mmwr_week"]], str(path), i)
            try:
                mmwr = MmwrWeek.from_year_week(year, week)
                rows.append(
                    WeeklyObservation(
                        week=mmwr,
                        pollutant_levels={
                            p: _parse_float(row[idx[p]], str(path), i) for p in pollutants
                        },
                        valid_day_counts={
                            p: _parse_int(row[idx[f"{p}_n"]], str(path), i) for p in pollutants
                        },
                        temperature_raw=_parse_float(row[idx["temp_centered"]], str(path), i),
                        deaths={
                            c: _parse_int(row[idx[c]], str(path), i) for c in causes
                        },
                        population=_parse_float(row[idx["offset"]], str(path), i),
                    )
                )
            except ValidationError as exc:
                raise SchemaError(str(exc), str(path), i) from None
    if not rows:
        raise SchemaError("dump has no data rows", str(path), 2)
    return WeeklyDataset.from_rows(rows)
