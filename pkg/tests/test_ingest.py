import datetime
import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerostate import ingest
from aerostate.errors import DataError, SchemaError, ValidationError
from aerostate.ingest import (
    AnnualPopulationRecord,
    DailyPollutantRecord,
    build_dataset,
    daily_average,
    fit_population_line,
    read_dataset_csv,
    weekly_average,
    weekly_population,
    write_dataset_csv,
)
from aerostate.mmwr import MmwrWeek, mmwr_week_of

from synth import write_source_files

D = datetime.date


def rec(day, value, station="s1", pollutant="o3"):
    return DailyPollutantRecord(day, station, pollutant, value)


class TestDailyAverage:
    def test_two_point_mean(self):
        out = daily_average([rec(D(2018, 1, 1), 4.0), rec(D(2018, 1, 1), 6.0, "s2")])
        assert out == (5.0, 2)

    def test_single_value_identity(self):
        assert daily_average([rec(D(2018, 1, 1), 3.25)]) == (3.25, 1)

    def test_empty_is_absent(self):
        assert daily_average([]) is None

    def test_mixed_pollutants_rejected(self):
        with pytest.raises(ValidationError):
            daily_average([rec(D(2018, 1, 1), 1.0), rec(D(2018, 1, 1), 2.0, "s2", "no2")])

    @given(st.data())
    @settings(max_examples=100)
    def test_matches_resummation_oracle(self, data):
        # randomized station counts over many days against brute-force sums
        n_days = data.draw(st.integers(1, 100))
        start = D(2019, 3, 3)
        for i in range(n_days):
            day = start + datetime.timedelta(days=i)
            n_stations = data.draw(st.integers(1, 11))
            values = data.draw(
                st.lists(st.floats(0, 500), min_size=n_stations, max_size=n_stations)
            )
            records = [rec(day, v, station=f"s{k}") for k, v in enumerate(values)]
            mean, n = daily_average(records)
            assert n == n_stations
            assert mean == pytest.approx(math.fsum(values) / n_stations, abs=1e-12)


class TestWeeklyAverage:
    def test_first_study_week_has_six_days(self):
        # data begin Monday 2018-01-01; week 1 runs Sunday 2017-12-31 .. Saturday
        week = mmwr_week_of(D(2018, 1, 1))
        study_start = D(2018, 1, 1)
        daily = {study_start + datetime.timedelta(days=i): 5.0 for i in range(30)}
        out = weekly_average(daily, week, study_start)
        assert out == (5.0, 6)

    def test_full_week_constant(self):
        week = MmwrWeek.from_year_week(2019, 10)
        daily = {d: 3.0 for d in week.days()}
        assert weekly_average(daily, week, D(2018, 1, 1)) == (3.0, 7)

    def test_three_reporting_days(self):
        week = MmwrWeek.from_year_week(2019, 10)
        days = week.days()
        daily = {days[0]: 2.0, days[3]: 4.0, days[6]: 9.0}
        assert weekly_average(daily, week, D(2018, 1, 1)) == (5.0, 3)

    def test_no_days_absent(self):
        week = MmwrWeek.from_year_week(2019, 10)
        assert weekly_average({}, week, D(2018, 1, 1)) is None

    @given(st.permutations(list(range(7))))
    def test_permutation_invariant(self, order):
        week = MmwrWeek.from_year_week(2020, 5)
        days = week.days()
        values = [1.0, 4.0, 9.0, 16.0, 25.0, 36.0, 49.0]
        daily = {days[i]: values[i] for i in order}
        out = weekly_average(daily, week, D(2018, 1, 1))
        assert out == (pytest.approx(sum(values) / 7), 7)


class TestPopulationLine:
    def test_two_points_exact(self):
        b0, b1 = fit_population_line(
            [AnnualPopulationRecord(2018, 100.0), AnnualPopulationRecord(2020, 120.0)]
        )
        assert b1 == pytest.approx(10.0)
        assert b0 + b1 * 2018 == pytest.approx(100.0)
        assert b0 + b1 * 2020 == pytest.approx(120.0)

    def test_constant_populations_zero_slope(self):
        recs = [AnnualPopulationRecord(y, 55.0) for y in range(2010, 2015)]
        b0, b1 = fit_population_line(recs)
        assert b1 == pytest.approx(0.0, abs=1e-12)
        assert b0 == pytest.approx(55.0)

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(3)
        years = np.arange(2005, 2015)
        pops = 1e6 + 1e4 * rng.standard_normal(10) + 5e3 * (years - 2005)
        recs = [AnnualPopulationRecord(int(y), float(p)) for y, p in zip(years, pops)]
        b0, b1 = fit_population_line(recs)
        # independent closed-form normal equations
        x = years.astype(float)
        n = x.size
        slope = (n * np.sum(x * pops) - x.sum() * pops.sum()) / (n * np.sum(x * x) - x.sum() ** 2)
        intercept = (pops.sum() - slope * x.sum()) / n
        assert b1 == pytest.approx(slope, rel=1e-9)
        assert b0 == pytest.approx(intercept, rel=1e-9)
        # residual orthogonality
        resid = pops - (b0 + b1 * x)
        assert abs(resid.sum()) <= 1e-6 * abs(pops.sum())
        assert abs(np.sum(x * resid)) <= 1e-6 * abs(np.sum(x * pops))

    def test_degenerate_designs(self):
        with pytest.raises(DataError):
            fit_population_line([AnnualPopulationRecord(2018, 1.0)])


class TestWeeklyPopulation:
    def test_flat_line(self):
        week = MmwrWeek.from_year_week(2020, 30)
        assert weekly_population((77.0, 0.0), week) == pytest.approx(77.0)

    def test_slope_52_steps_by_one_per_week(self):
        w1 = MmwrWeek.from_year_week(2020, 10)
        w2 = w1.next
        line = (0.0 - 52.0 * 2000, 52.0)
        step = weekly_population(line, w2) - weekly_population(line, w1)
        assert step == pytest.approx(1.0, rel=0.02)

    def test_monotone_with_slope_sign(self):
        line = fit_population_line(
            [AnnualPopulationRecord(2018, 100.0), AnnualPopulationRecord(2022, 120.0)]
        )
        weeks = [MmwrWeek.from_year_week(2019, w) for w in range(1, 40)]
        values = [weekly_population(line, w) for w in weeks]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_nonpositive_rejected(self):
        week = MmwrWeek.from_year_week(2020, 30)
        with pytest.raises(DataError):
            weekly_population((0.0, 0.0), week)


class TestBuildDataset:
    def test_paper_span_has_259_rows(self, paper_span_files):
        files, span = paper_span_files
        result = build_dataset(
            [files["pollutants"]], files["temperature"], files["deaths"],
            files["population"], span,
        )
        assert result.dataset.n_weeks == 259
        assert not result.dropped
        # first study week only has Monday..Saturday of data
        assert result.dataset.rows[0].valid_day_counts["o3"] == 6
        assert all(r.valid_day_counts["o3"] == 7 for r in result.dataset.rows[1:])

    def test_complete_ten_week_files(self, tmp_path):
        span = (D(2019, 1, 6), D(2019, 3, 16))
        files = write_source_files(tmp_path, span=span, seed=1)
        result = build_dataset(
            [files["pollutants"]], files["temperature"], files["deaths"],
            files["population"], span,
        )
        assert result.dataset.n_weeks == 10
        assert not result.dropped

    def test_missing_pollutant_week_dropped(self, tmp_path):
        span = (D(2019, 1, 6), D(2019, 3, 16))
        gone = MmwrWeek.from_year_week(2019, 11)  # last week of the span
        files = write_source_files(
            tmp_path, span=span, seed=2, skip_pollutant_dates=tuple(gone.days())
        )
        result = build_dataset(
            [files["pollutants"]], files["temperature"], files["deaths"],
            files["population"], span,
        )
        assert result.dataset.n_weeks == 9
        assert len(result.dropped) == 1
        assert result.dropped[0].week == gone
        assert any("o3" in r for r in result.dropped[0].reasons)

    def test_interior_drop_keeps_longest_run(self, tmp_path):
        span = (D(2019, 1, 6), D(2019, 3, 16))
        gone = MmwrWeek.from_year_week(2019, 4)  # third week of ten
        files = write_source_files(
            tmp_path, span=span, seed=3, skip_death_weeks=(gone,)
        )
        result = build_dataset(
            [files["pollutants"]], files["temperature"], files["deaths"],
            files["population"], span,
        )
        # weeks 5..11 survive as the longest gap-free run; 2,3 reported too
        assert result.dataset.n_weeks == 7
        assert len(result.dropped) == 3

    def test_determinism_byte_identical(self, tmp_path):
        span = (D(2019, 1, 6), D(2019, 3, 16))
        files = write_source_files(tmp_path / "src", span=span, seed=4)
        digests = []
        for attempt in range(2):
            result = build_dataset(
                [files["pollutants"]], files["temperature"], files["deaths"],
                files["population"], span,
            )
            out = tmp_path / f"dump{attempt}.csv"
            write_dataset_csv(result.dataset, out)
            digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_dump_round_trip(self, tmp_path):
        span = (D(2019, 1, 6), D(2019, 3, 16))
        files = write_source_files(tmp_path, span=span, seed=5)
        result = build_dataset(
            [files["pollutants"]], files["temperature"], files["deaths"],
            files["population"], span,
        )
        dump = tmp_path / "dataset.csv"
        write_dataset_csv(result.dataset, dump)
        loaded = read_dataset_csv(dump)
        assert loaded.n_weeks == result.dataset.n_weeks
        assert loaded.pollutants == result.dataset.pollutants
        assert loaded.causes == result.dataset.causes
        np.testing.assert_allclose(
            loaded.temperature_centered(),
            result.dataset.temperature_centered(),
            atol=1e-9,
        )
        np.testing.assert_array_equal(
            loaded.deaths_for("copd"), result.dataset.deaths_for("copd")
        )

    def test_short_span_rejected(self, tmp_path):
        span = (D(2019, 1, 6), D(2019, 1, 14))
        files = write_source_files(tmp_path, span=span, seed=6)
        with pytest.raises(ValidationError):
            build_dataset(
                [files["pollutants"]], files["temperature"], files["deaths"],
                files["population"], span,
            )


class TestSchemas:
    def test_bad_header_cites_line(self, tmp_path):
        bad = tmp_path / "p.csv"
        bad.write_text("date,station,value\n2018-01-01,s1,3\n")
        with pytest.raises(SchemaError) as err:
            ingest.parse_pollutant_csv(bad)
        assert err.value.line == 1

    def test_bad_date_cites_line(self, tmp_path):
        bad = tmp_path / "p.csv"
        bad.write_text("date,station_id,pollutant,value\n2018-13-40,s1,o3,3\n")
        with pytest.raises(SchemaError) as err:
            ingest.parse_pollutant_csv(bad)
        assert err.value.line == 2

    def test_negative_concentration_rejected(self, tmp_path):
        bad = tmp_path / "p.csv"
        bad.write_text("date,station_id,pollutant,value\n2018-01-01,s1,o3,-3\n")
        with pytest.raises(SchemaError):
            ingest.parse_pollutant_csv(bad)

    def test_population_years_strictly_increasing(self, tmp_path):
        bad = tmp_path / "pop.csv"
        bad.write_text("year,population\n2018,100\n2018,101\n")
        with pytest.raises(SchemaError) as err:
            ingest.parse_population_csv(bad)
        assert err.value.line == 3

    def test_duplicate_death_row_rejected(self, tmp_path):
        bad = tmp_path / "d.csv"
        bad.write_text(
            "mmwr_year,mmwr_week,cause,count\n2018,1,copd,10\n2018,1,copd,11\n"
        )
        with pytest.raises(SchemaError):
            ingest.parse_deaths_csv(bad)
