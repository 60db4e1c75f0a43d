"""Weekly modeling table: observation rows, dataset container, centering.

All types are immutable after construction; they can be shared freely
across worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .mmwr import MmwrWeek


def center_temperature(raw_series: Sequence[float]) -> tuple[list[float], float]:
    """Subtract the series mean; returns (centered values, the mean).

    The centered series sums to zero within 1e-9 * N by construction.
    """
    if len(raw_series) == 0:
        raise ValidationError("cannot center an empty temperature series")
    vals = [float(v) for v in raw_series]
    if not all(math.isfinite(v) for v in vals):
        raise ValidationError("temperature series contains non-finite values")
    mean = math.fsum(vals) / len(vals)
    return [v - mean for v in vals], mean


def _frozen(m: Mapping) -> Mapping:
    return MappingProxyType(dict(m))


@dataclass(frozen=True)
class WeeklyObservation:
    """One MMWR week of aligned pollutant, temperature, death, and population data.

    `valid_day_counts[p]` is the number of days of the week with at least one
    station measurement of pollutant `p`; it drives the measurement-error
    variance scaling and is always in 0..7.
    """

    week: MmwrWeek
    pollutant_levels: Mapping[str, float]
    valid_day_counts: Mapping[str, int]
    temperature_raw: float
    deaths: Mapping[str, int]
    population: float

    def __post_init__(self):
        object.__setattr__(self, "pollutant_levels", _frozen(self.pollutant_levels))
        object.__setattr__(self, "valid_day_counts", _frozen(self.valid_day_counts))
        object.__setattr__(self, "deaths", _frozen(self.deaths))
        for p, n in self.valid_day_counts.items():
            if not (0 <= n <= 7):
                raise ValidationError(f"valid-day count {n} for {p} outside 0..7")
        for c, d in self.deaths.items():
            if d < 0 or d != int(d):
                raise ValidationError(f"death count {d} for {c} must be a nonnegative integer")
        if not (self.population > 0):
            raise ValidationError(f"population must be positive, got {self.population}")
        if not math.isfinite(self.temperature_raw):
            raise ValidationError("temperature is not finite")


@dataclass(frozen=True)
class WeeklyDataset:
    """Gap-free, consecutively ordered weekly rows plus the centering constant.

    `temperature_mean` is the constant subtracted to form the centered
    temperature; it is computed from the rows themselves by `from_rows`.
    """

    rows: tuple[WeeklyObservation, ...]
    temperature_mean: float

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows:
            raise ValidationError("dataset has no rows")
        for prev, cur in zip(self.rows, self.rows[1:]):
            if cur.week != prev.week.next:
                raise ValidationError(
                    f"weeks must be strictly consecutive: {prev.week} then {cur.week}"
                )
        keys = set(self.rows[0].pollutant_levels)
        causes = set(self.rows[0].deaths)
        for r in self.rows:
            if set(r.pollutant_levels) != keys or set(r.deaths) != causes:
                raise ValidationError("all rows must share the same pollutant and cause keys")
        centered = [r.temperature_raw - self.temperature_mean for r in self.rows]
        scale = max(1.0, max(abs(r.temperature_raw) for r in self.rows))
        if abs(math.fsum(centered) / len(centered)) > 1e-9 * scale:
            raise ValidationError("centered temperature does not average to zero")

    @classmethod
    def from_rows(cls, rows: Iterable[WeeklyObservation]) -> "WeeklyDataset":
        rows = tuple(rows)
        if not rows:
            raise ValidationError("dataset has no rows")
        _, mean = center_temperature([r.temperature_raw for r in rows])
        return cls(rows, mean)

    @property
    def n_weeks(self) -> int:
        return len(self.rows)

    @property
    def pollutants(self) -> list[str]:
        return sorted(self.rows[0].pollutant_levels)

    @property
    def causes(self) -> list[str]:
        return sorted(self.rows[0].deaths)

    @property
    def weeks(self) -> list[MmwrWeek]:
        return [r.week for r in self.rows]

    def temperature_centered(self) -> np.ndarray:
        return np.array([r.temperature_raw - self.temperature_mean for r in self.rows])

    def pollutant(self, name: str) -> np.ndarray:
        return np.array([r.pollutant_levels[name] for r in self.rows])

    def valid_days(self, name: str) -> np.ndarray:
        return np.array([r.valid_day_counts[name] for r in self.rows], dtype=int)

    def deaths_for(self, cause: str) -> np.ndarray:
        return np.array([r.deaths[cause] for r in self.rows], dtype=int)

    def offsets(self) -> np.ndarray:
        return np.array([r.population for r in self.rows])
