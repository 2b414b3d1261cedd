"""Per-day epidemic risk features and their min-max normalization.

Three features are derived per country-day from a cleaned series:

* risk: trailing 28-day average of new cases divided by population,
* death rate: cumulative deaths divided by population,
* vaccination rate: cumulative people vaccinated divided by population.

Each feature is kept both raw and min-max normalized; the normalization
bounds are stored on the panel so downstream results can be reported back in
raw units.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataQualityWarning, EmptyInputError
from .ingest import CountrySeries

RISK_WINDOW_DAYS = 28

#: Feature keys used in norm_params mappings and panel CSV headers.
FEATURES = ("risk", "death_rate", "vacc_rate")

PANEL_COLUMNS = (
    "date",
    "risk_raw",
    "risk",
    "death_rate_raw",
    "death_rate",
    "vacc_rate_raw",
    "vacc_rate",
)


@dataclass
class RiskPanel:
    """Raw and normalized per-day features for one country."""

    country_id: str
    dates: list[dt.date]
    risk_raw: np.ndarray
    death_rate_raw: np.ndarray
    vacc_rate_raw: np.ndarray
    risk: np.ndarray
    death_rate: np.ndarray
    vacc_rate: np.ndarray
    norm_params: dict[str, tuple[float, float]]

    def __len__(self) -> int:
        return len(self.dates)

    def date_index(self, day: dt.date) -> int:
        """Index of `day` in the panel, or raise KeyError."""
        try:
            return self.dates.index(day)
        except ValueError:
            raise KeyError(f"{self.country_id}: no panel row for {day}") from None


def risk_series(new_cases, population: float) -> np.ndarray:
    """Trailing 28-day mean of daily new cases, per capita.

    output[t] = sum(new_cases[max(0, t-27) .. t]) / (28 * population).
    Windows shorter than 28 days at the head of the series still divide
    by 28, so early values ramp up from zero rather than being averaged
    over fewer days.
    """
    if population <= 0:
        raise ValueError(f"population must be positive, got {population}")
    cases = np.asarray(new_cases, dtype=float)
    if cases.size == 0:
        raise EmptyInputError("risk_series needs at least one day of data")
    csum = np.cumsum(cases)
    window = csum.copy()
    window[RISK_WINDOW_DAYS:] = csum[RISK_WINDOW_DAYS:] - csum[:-RISK_WINDOW_DAYS]
    return window / (RISK_WINDOW_DAYS * population)


def rate_series(cumulative, population: float) -> np.ndarray:
    """Cumulative count divided by population, clipped into [0, 1].

    Values outside [0, 1] (over-counted public data) are clipped with a
    DataQualityWarning rather than rejected.
    """
    if population <= 0:
        raise ValueError(f"population must be positive, got {population}")
    counts = np.asarray(cumulative, dtype=float)
    rates = counts / population
    out_of_range = int(np.sum((rates < 0.0) | (rates > 1.0)))
    if out_of_range:
        warnings.warn(
            f"{out_of_range} rate value(s) outside [0, 1]; clipped",
            DataQualityWarning,
            stacklevel=2,
        )
        rates = np.clip(rates, 0.0, 1.0)
    return rates


def min_max_normalize(x) -> tuple[np.ndarray, tuple[float, float]]:
    """Scale `x` to [0, 1], returning (scaled, (min, max)).

    A constant sequence maps to all zeros (a flat signal carries no
    information and must not poison the regression); the returned bounds
    still allow exact denormalization whenever max > min.
    """
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        raise EmptyInputError("cannot normalize an empty sequence")
    lo = float(np.min(arr))
    hi = float(np.max(arr))
    if hi > lo:
        return (arr - lo) / (hi - lo), (lo, hi)
    return np.zeros_like(arr), (lo, hi)


def normalize_with(x, params: tuple[float, float]) -> np.ndarray:
    """Apply fixed (min, max) bounds, e.g. for global normalization."""
    arr = np.asarray(x, dtype=float)
    lo, hi = params
    if hi > lo:
        return (arr - lo) / (hi - lo)
    return np.zeros_like(arr)


def denormalize(y, params: tuple[float, float]) -> np.ndarray:
    """Invert :func:`min_max_normalize` for the given bounds."""
    lo, hi = params
    return np.asarray(y, dtype=float) * (hi - lo) + lo


def _raw_features(series: CountrySeries) -> dict[str, np.ndarray]:
    if series.static is None:
        raise ValueError(
            f"{series.country_id}: static attributes required to build features"
        )
    population = series.static.population
    return {
        "risk": risk_series(series.column("new_cases"), population),
        "death_rate": rate_series(series.column("total_deaths"), population),
        "vacc_rate": rate_series(series.column("people_vaccinated"), population),
    }


def global_norm_params(
    series_list: list[CountrySeries],
) -> dict[str, tuple[float, float]]:
    """Min/max of each raw feature pooled across all countries."""
    if not series_list:
        raise EmptyInputError("no series to normalize")
    pooled = {f: [] for f in FEATURES}
    for series in series_list:
        for feature, values in _raw_features(series).items():
            pooled[feature].append(values)
    return {
        f: (float(np.min(np.concatenate(v))), float(np.max(np.concatenate(v))))
        for f, v in pooled.items()
    }


def build_panel(
    series: CountrySeries,
    norm_params: dict[str, tuple[float, float]] | None = None,
) -> RiskPanel:
    """Assemble the per-day feature panel for one cleaned, gap-free series.

    By default each feature is normalized against its own per-country range;
    pass `norm_params` (e.g. from :func:`global_norm_params`) to normalize
    against externally fixed bounds instead.
    """
    raw = _raw_features(series)
    if norm_params is None:
        normalized = {}
        params = {}
        for feature, values in raw.items():
            normalized[feature], params[feature] = min_max_normalize(values)
    else:
        params = {f: (float(norm_params[f][0]), float(norm_params[f][1])) for f in FEATURES}
        normalized = {f: normalize_with(raw[f], params[f]) for f in FEATURES}

    return RiskPanel(
        country_id=series.country_id,
        dates=series.dates(),
        risk_raw=raw["risk"],
        death_rate_raw=raw["death_rate"],
        vacc_rate_raw=raw["vacc_rate"],
        risk=normalized["risk"],
        death_rate=normalized["death_rate"],
        vacc_rate=normalized["vacc_rate"],
        norm_params=params,
    )


def _fmt(x: float) -> str:
    # repr of a Python float round-trips exactly through read_panel_csv
    return repr(float(x))


def write_panel_csv(panel: RiskPanel, path) -> None:
    """Write one country's panel in the documented column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PANEL_COLUMNS)
        for i, day in enumerate(panel.dates):
            writer.writerow(
                [
                    day.isoformat(),
                    _fmt(panel.risk_raw[i]),
                    _fmt(panel.risk[i]),
                    _fmt(panel.death_rate_raw[i]),
                    _fmt(panel.death_rate[i]),
                    _fmt(panel.vacc_rate_raw[i]),
                    _fmt(panel.vacc_rate[i]),
                ]
            )


def read_panel_csv(
    path,
    country_id: str,
    norm_params: dict[str, tuple[float, float]] | None = None,
) -> RiskPanel:
    """Load a panel written by :func:`write_panel_csv`.

    Normalization bounds are not part of the CSV contract; when not supplied
    they are recovered as the min/max of each raw column, which reproduces
    the per-country bounds exactly.
    """
    dates: list[dt.date] = []
    columns: dict[str, list[float]] = {c: [] for c in PANEL_COLUMNS[1:]}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PANEL_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise EmptyInputError(f"{path}: not a panel CSV (missing {missing})")
        for row in reader:
            dates.append(dt.date.fromisoformat(row["date"]))
            for c in columns:
                columns[c].append(float(row[c]))
    if not dates:
        raise EmptyInputError(f"{path}: empty panel")

    arrays = {c: np.asarray(v, dtype=float) for c, v in columns.items()}
    if norm_params is None:
        norm_params = {
            f: (float(np.min(arrays[f + "_raw"])), float(np.max(arrays[f + "_raw"])))
            for f in FEATURES
        }
    return RiskPanel(
        country_id=country_id,
        dates=dates,
        risk_raw=arrays["risk_raw"],
        death_rate_raw=arrays["death_rate_raw"],
        vacc_rate_raw=arrays["vacc_rate_raw"],
        risk=arrays["risk"],
        death_rate=arrays["death_rate"],
        vacc_rate=arrays["vacc_rate"],
        norm_params=norm_params,
    )
