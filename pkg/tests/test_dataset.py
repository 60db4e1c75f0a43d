import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aerostate.dataset import WeeklyDataset, WeeklyObservation, center_temperature
from aerostate.errors import ValidationError
from aerostate.mmwr import MmwrWeek


def make_rows(n=5, start=(2018, 1), temps=None, pop=1.0):
    weeks = [MmwrWeek.from_year_week(*start)]
    while len(weeks) < n:
        weeks.append(weeks[-1].next)
    temps = temps if temps is not None else [10.0 + i for i in range(n)]
    return [
        WeeklyObservation(
            week=w,
            pollutant_levels={"o3": 0.03 + 0.001 * i},
            valid_day_counts={"o3": 7},
            temperature_raw=temps[i],
            deaths={"copd": 40 + i},
            population=pop,
        )
        for i, w in enumerate(weeks)
    ]


def test_center_symmetric():
    centered, mean = center_temperature([10.0, 20.0, 30.0])
    assert centered == [-10.0, 0.0, 10.0]
    assert mean == 20.0


def test_center_constant_series():
    centered, mean = center_temperature([4.0] * 6)
    assert centered == [0.0] * 6
    assert mean == 4.0


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=200))
def test_center_sums_to_zero(values):
    centered, mean = center_temperature(values)
    assert abs(math.fsum(centered)) <= 1e-9 * max(1.0, len(values))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=100))
def test_center_idempotent(values):
    centered, _ = center_temperature(values)
    again, mean2 = center_temperature(centered)
    assert abs(mean2) < 1e-9
    assert np.allclose(again, centered, atol=1e-12)


def test_center_rejects_bad_input():
    with pytest.raises(ValidationError):
        center_temperature([])
    with pytest.raises(ValidationError):
        center_temperature([1.0, float("nan")])


def test_dataset_roundtrip_accessors():
    ds = WeeklyDataset.from_rows(make_rows(6))
    assert ds.n_weeks == 6
    assert ds.pollutants == ["o3"]
    assert ds.causes == ["copd"]
    assert abs(ds.temperature_centered().mean()) < 1e-12
    assert ds.deaths_for("copd")[0] == 40
    assert np.all(ds.offsets() == 1.0)
    assert np.all(ds.valid_days("o3") == 7)


def test_dataset_rejects_week_gap():
    rows = make_rows(5)
    with pytest.raises(ValidationError):
        WeeklyDataset.from_rows(rows[:2] + rows[3:])


def test_dataset_rejects_inconsistent_keys():
    rows = make_rows(3)
    bad = WeeklyObservation(
        week=rows[2].week, pollutant_levels={"no2": 1.0}, valid_day_counts={"no2": 7},
        temperature_raw=0.0, deaths={"copd": 1}, population=1.0,
    )
    with pytest.raises(ValidationError):
        WeeklyDataset.from_rows(rows[:2] + [bad])


def test_observation_validation():
    w = MmwrWeek.from_year_week(2018, 1)
    with pytest.raises(ValidationError):
        WeeklyObservation(w, {"o3": 1.0}, {"o3": 9}, 0.0, {"copd": 1}, 1.0)
    with pytest.raises(ValidationError):
        WeeklyObservation(w, {"o3": 1.0}, {"o3": 7}, 0.0, {"copd": -1}, 1.0)
    with pytest.raises(ValidationError):
        WeeklyObservation(w, {"o3": 1.0}, {"o3": 7}, 0.0, {"copd": 1}, 0.0)


def test_observation_mappings_frozen():
    w = MmwrWeek.from_year_week(2018, 1)
    obs = WeeklyObservation(w, {"o3": 1.0}, {"o3": 7}, 0.0, {"copd": 1}, 1.0)
    with pytest.raises(TypeError):
        obs.pollutant_levels["o3"] = 2.0
