"""Parsing, validation, and cleaning of per-country epidemic time series.

Time-series input is a long-format CSV (one row per country-day) with a
configurable column mapping; static country attributes (population, hospital
beds per thousand, human development index) come from a second CSV. Cleaning
is total: negative daily counts are zeroed, missing cells are zero-filled
(daily deltas) or carried forward (cumulative counts), cumulative columns are
forced non-decreasing via a running maximum, and calendar gaps are filled so
every series sits on a consecutive daily grid.
"""

from __future__ import annotations

import datetime as dt
import math
import warnings
from dataclasses import dataclass, field, replace

import pandas as pd

from .errors import (
    DataQualityWarning,
    EmptyInputError,
    SchemaError,
    ValidationError,
)

#: Logical column name -> default CSV header for the time-series file.
DEFAULT_SCHEMA = {
    "country_id": "iso_code",
    "name": "location",
    "date": "date",
    "new_cases": "new_cases",
    "new_deaths": "new_deaths",
    "total_deaths": "total_deaths",
    "people_vaccinated": "people_vaccinated",
}

_DELTA_FIELDS = ("new_cases", "new_deaths")
_CUMULATIVE_FIELDS = ("total_deaths", "people_vaccinated")

STATIC_COLUMNS = (
    "country_id",
    "name",
    "population",
    "hospital_beds_per_thousand",
    "human_development_index",
)


@dataclass(frozen=True)
class DailyRecord:
    """One country-day of raw counts; NaN marks a missing cell before cleaning."""

    date: dt.date
    new_cases: float = math.nan
    new_deaths: float = math.nan
    total_deaths: float = math.nan
    people_vaccinated: float = math.nan


@dataclass(frozen=True)
class CountryStatic:
    """Time-invariant country attributes, validated on construction."""

    country_id: str
    name: str
    population: float
    hospital_beds_per_thousand: float
    human_development_index: float

    def __post_init__(self) -> None:
        if not self.population > 0:
            raise ValidationError(
                f"{self.country_id}: population must be positive, got {self.population}"
            )
        if not 0.0 <= self.human_development_index <= 1.0:
            raise ValidationError(
                f"{self.country_id}: human development index must lie in [0, 1], "
                f"got {self.human_development_index}"
            )
        if not self.hospital_beds_per_thousand >= 0:
            raise ValidationError(
                f"{self.country_id}: hospital beds per thousand must be >= 0, "
                f"got {self.hospital_beds_per_thousand}"
            )


@dataclass
class CountrySeries:
    """A country's date-sorted daily records plus (optionally) its static attributes.

    Static attributes live in a separate input file, so they are attached
    after parsing via :func:`attach_static`.
    """

    country_id: str
    records: list[DailyRecord] = field(default_factory=list)
    static: CountryStatic | None = None
    name: str = ""

    def dates(self) -> list[dt.date]:
        return [r.date for r in self.records]

    def column(self, field_name: str) -> list[float]:
        return [getattr(r, field_name) for r in self.records]


@dataclass
class CleaningStats:
    """Counts of repairs applied by :func:`clean_series`."""

    negatives_zeroed: int = 0
    missing_filled: int = 0
    cumulative_repairs: int = 0
    dates_inserted: int = 0
    duplicates_dropped: int = 0

    @property
    def total(self) -> int:
        return (
            self.negatives_zeroed
            + self.missing_filled
            + self.cumulative_repairs
            + self.dates_inserted
            + self.duplicates_dropped
        )


def parse_country_csv(
    path, schema: dict[str, str] | None = None
) -> list[CountrySeries]:
    """Parse a long-format time-series CSV into one CountrySeries per country.

    `schema` overrides entries of :data:`DEFAULT_SCHEMA` (logical name ->
    actual header). Rows are grouped by country id and date-sorted.
    Unparseable numeric cells become NaN (missing); rows without a country id
    or a parseable ISO date are dropped. Raises FileNotFoundError for a
    missing file, SchemaError for a missing mapped column, and
    EmptyInputError when no data rows survive.
    """
    colmap = dict(DEFAULT_SCHEMA)
    if schema:
        colmap.update(schema)

    df = pd.read_csv(path, dtype=str, keep_default_na=False)

    missing = [
        f"{actual} (maps to {logical})"
        for logical, actual in colmap.items()
        if actual not in df.columns
    ]
    if missing:
        raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")

    out = pd.DataFrame(
        {logical: df[actual] for logical, actual in colmap.items()}
    )
    out["date"] = pd.to_datetime(out["date"], format="%Y-%m-%d", errors="coerce")
    for fld in _DELTA_FIELDS + _CUMULATIVE_FIELDS:
        out[fld] = pd.to_numeric(out[fld], errors="coerce")

    out = out[(out["country_id"].str.strip() != "") & out["date"].notna()]
    if out.empty:
        raise EmptyInputError(f"{path}: no data rows")

    series: list[CountrySeries] = []
    for country_id, grp in out.groupby("country_id", sort=True):
        grp = grp.sort_values("date", kind="stable")
        names = [n for n in grp["name"] if n.strip()]
        records = [
            DailyRecord(
                date=row.date.date(),
                new_cases=row.new_cases,
                new_deaths=row.new_deaths,
                total_deaths=row.total_deaths,
                people_vaccinated=row.people_vaccinated,
            )
            for row in grp.itertuples(index=False)
        ]
        series.append(
            CountrySeries(
                country_id=str(country_id),
                records=records,
                name=names[0] if names else str(country_id),
            )
        )
    return series


def parse_static_attributes(path) -> dict[str, CountryStatic]:
    """Parse the static-attributes CSV into a country_id -> CountryStatic map.

    Expects the fixed columns ``country_id, name, population,
    hospital_beds_per_thousand, human_development_index``. Values violating
    the CountryStatic invariants raise ValidationError naming the country.
    Duplicate country ids keep the last row.
    """
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in STATIC_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")
    if df.empty:
        raise EmptyInputError(f"{path}: no data rows")

    statics: dict[str, CountryStatic] = {}
    for row in df.itertuples(index=False):
        cid = str(row.country_id).strip()
        if not cid:
            continue

        def num(value, column, country=cid):
            parsed = pd.to_numeric(value, errors="coerce")
            if pd.isna(parsed):
                raise ValidationError(f"{country}: unparseable {column} {value!r}")
            return float(parsed)

        statics[cid] = CountryStatic(
            country_id=cid,
            name=str(row.name).strip() or cid,
            population=num(row.population, "population"),
            hospital_beds_per_thousand=num(
                row.hospital_beds_per_thousand, "hospital_beds_per_thousand"
            ),
            human_development_index=num(
                row.human_development_index, "human_development_index"
            ),
        )
    if not statics:
        raise EmptyInputError(f"{path}: no data rows")
    return statics


def attach_static(
    series_list: list[CountrySeries], statics: dict[str, CountryStatic]
) -> list[CountrySeries]:
    """Attach static attributes, dropping (with a warning) countries that lack them."""
    matched: list[CountrySeries] = []
    dropped: list[str] = []
    for s in series_list:
        st = statics.get(s.country_id)
        if st is None:
            dropped.append(s.country_id)
            continue
        matched.append(replace(s, static=st))
    if dropped:
        warnings.warn(
            f"no static attributes for {len(dropped)} countr{'y' if len(dropped) == 1 else 'ies'}"
            f" ({', '.join(sorted(dropped))}); dropped",
            DataQualityWarning,
            stacklevel=2,
        )
    return matched


def clean_series(raw: CountrySeries) -> CountrySeries:
    """Return a repaired copy of `raw` satisfying every record invariant.

    Cleaning is total (never raises): it sorts and de-duplicates dates (last
    row wins), zero-fills missing daily deltas, zeroes negative deltas,
    carries missing cumulative values forward, forces cumulative columns
    non-decreasing via a running maximum, and inserts any missing calendar
    days with zero deltas and carried cumulatives. Idempotent.
    """
    cleaned, _ = clean_series_with_stats(raw)
    return cleaned


def clean_series_with_stats(raw: CountrySeries) -> tuple[CountrySeries, CleaningStats]:
    """As :func:`clean_series`, also reporting how many cells were repaired."""
    stats = CleaningStats()
    if not raw.records:
        return replace(raw, records=[]), stats

    by_date: dict[dt.date, DailyRecord] = {}
    for rec in sorted(raw.records, key=lambda r: r.date):
        if rec.date in by_date:
            stats.duplicates_dropped += 1
        by_date[rec.date] = rec

    first = min(by_date)
    last = max(by_date)
    out: list[DailyRecord] = []
    prev_cumulative = {fld: 0.0 for fld in _CUMULATIVE_FIELDS}

    day = first
    while day <= last:
        rec = by_date.get(day)
        inserted = rec is None
        if inserted:
            stats.dates_inserted += 1  # counted once per day, not per cell
            rec = DailyRecord(date=day)

        values: dict[str, float] = {}
        for fld in _DELTA_FIELDS:
            v = getattr(rec, fld)
            if math.isnan(v):
                if not inserted:
                    stats.missing_filled += 1
                v = 0.0
            elif v < 0:
                stats.negatives_zeroed += 1
                v = 0.0
            values[fld] = v
        for fld in _CUMULATIVE_FIELDS:
            v = getattr(rec, fld)
            prev = prev_cumulative[fld]
            if math.isnan(v):
                if not inserted:
                    stats.missing_filled += 1
                v = prev
            elif v < prev:
                stats.cumulative_repairs += 1
                v = prev
            prev_cumulative[fld] = v
            values[fld] = v

        out.append(DailyRecord(date=day, **values))
        day += dt.timedelta(days=1)

    return replace(raw, records=out), stats


def filter_window(series: CountrySeries, start: dt.date, end: dt.date) -> CountrySeries:
    """Restrict a series to records dated within [start, end], inclusive.

    Raises ValueError if start > end and EmptyInputError when the window
    contains no records.
    """
    if start > end:
        raise ValueError(f"window start {start} is after end {end}")
    kept = [r for r in series.records if start <= r.date <= end]
    if not kept:
        raise EmptyInputError(
            f"{series.country_id}: no records in window {start}..{end}"
        )
    return replace(series, records=kept)
