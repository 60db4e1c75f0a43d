"""MMWR (epidemiological) week calendar arithmetic.

MMWR weeks run Sunday through Saturday.  Week 1 of a year is the week
containing January 4, i.e. the first week with at least four days in the
new year.  Years therefore have 52 or 53 weeks.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

from .errors import ValidationError

MIN_YEAR = 1970
MAX_YEAR = 2100

_ONE_DAY = datetime.timedelta(days=1)
_ONE_WEEK = datetime.timedelta(days=7)


def _sunday_on_or_before(d: datetime.date) -> datetime.date:
    # Python weekday(): Monday=0 .. Sunday=6
    return d - datetime.timedelta(days=(d.weekday() + 1) % 7)


def _week1_start(year: int) -> datetime.date:
    return _sunday_on_or_before(datetime.date(year, 1, 4))


@dataclass(frozen=True, order=True)
class MmwrWeek:
    """One MMWR week, with its calendar span.

    Ordering follows (year, week), which coincides with calendar order.
    """

    year: int
    week: int
    start_date: datetime.date
    end_date: datetime.date

    def __post_init__(self):
        if not (1 <= self.week <= 53):
            raise ValidationError(f"week number {self.week} outside 1..53")
        if self.start_date.weekday() != 6:
            raise ValidationError(f"start date {self.start_date} is not a Sunday")
        if self.end_date - self.start_date != datetime.timedelta(days=6):
            raise ValidationError("week must span exactly Sunday..Saturday")

    @classmethod
    def from_year_week(cls, year: int, week: int) -> "MmwrWeek":
        if not (MIN_YEAR <= year <= MAX_YEAR):
            raise ValidationError(f"year {year} outside supported range {MIN_YEAR}..{MAX_YEAR}")
        start = _week1_start(year) + (week - 1) * _ONE_WEEK
        made = cls(year, week, start, start + datetime.timedelta(days=6))
        if mmwr_week_of(start) != made:
            raise ValidationError(f"{year} has no MMWR week {week}")
        return made

    @property
    def next(self) -> "MmwrWeek":
        return mmwr_week_of(self.end_date + _ONE_DAY)

    def contains(self, d: datetime.date) -> bool:
        return self.start_date <= d <= self.end_date

    def day_index(self, d: datetime.date) -> int:
        """1-based position of a date inside the week (Sunday=1 .. Saturday=7)."""
        if not self.contains(d):
            raise ValidationError(f"{d} is not in {self}")
        return (d - self.start_date).days + 1

    def days(self) -> list[datetime.date]:
        return [self.start_date + i * _ONE_DAY for i in range(7)]

    def __str__(self):
        return f"{self.year}-W{self.week:02d}"


def mmwr_week_of(date: datetime.date) -> MmwrWeek:
    """Map a calendar date to the MMWR week containing it.

    Raises a validation error outside the supported 1970..2100 range.
    """
    if not (MIN_YEAR <= date.year <= MAX_YEAR):
        raise ValidationError(f"date {date} outside supported range {MIN_YEAR}..{MAX_YEAR}")
    start = _sunday_on_or_before(date)
    # The week belongs to the year holding >= 4 of its days, i.e. the year
    # of its Wednesday.
    year = (start + datetime.timedelta(days=3)).year
    week = (start - _week1_start(year)).days // 7 + 1
    return MmwrWeek(year, week, start, start + datetime.timedelta(days=6))


def weeks_between(first: MmwrWeek, last: MmwrWeek) -> list[MmwrWeek]:
    """All MMWR weeks from `first` to `last` inclusive, in order."""
    if last.start_date < first.start_date:
        raise ValidationError("last week precedes first week")
    out = []
    w = first
    while w.start_date <= last.start_date:
        out.append(w)
        w = w.next
    return out


def weeks_covering(start: datetime.date, end: datetime.date) -> list[MmwrWeek]:
    """All MMWR weeks that overlap the closed date interval [start, end]."""
    if end < start:
        raise ValidationError("span end precedes span start")
    return weeks_between(mmwr_week_of(start), mmwr_week_of(end))
