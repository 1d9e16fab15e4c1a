"""Rate fields, rate panels and covariate panels, plus their CSV formats.

Missing values are NaN inside arrays and ``None`` (or NaN) in mappings; in
files they are an empty cell or ``NA``. A zero rate is data, never missing.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError, MalformedRecord, RegionMismatch
from .geo import _pad, _require_columns, parse_region_id

MISSING = None
NA_TOKENS = ("", "NA", "na", "NaN", "nan")

FEATURES = (
    "below_poverty",
    "unemployment",
    "no_high_school_diploma",
    "age_65_and_older",
    "age_17_and_younger",
    "single_parent_households",
    "limited_english",
    "minority_status",
    "multi_unit_structures",
    "mobile_homes",
    "crowding",
    "no_vehicle",
    "group_quarters",
)

FEATURE_LABELS = {
    "below_poverty": "Below poverty",
    "unemployment": "Unemployment",
    "no_high_school_diploma": "No high school diploma",
    "age_65_and_older": "Aged 65 or older",
    "age_17_and_younger": "Aged 17 or younger",
    "single_parent_households": "Single-parent households",
    "limited_english": "Limited English ability",
    "minority_status": "Minority status",
    "multi_unit_structures": "Multi-unit structures",
    "mobile_homes": "Mobile homes",
    "crowding": "Crowding",
    "no_vehicle": "No vehicle",
    "group_quarters": "Group quarters",
}


def _to_float(v):
    if v is None:
        return math.nan
    if isinstance(v, str):
        if v.strip() in NA_TOKENS:
            return math.nan
        try:
            return float(v)
        except ValueError:
            raise MalformedRecord(f"bad numeric value {v!r}") from None
    return float(v)


@dataclass(frozen=True, eq=False)
class RateField:
    """One year of rates per 100,000 persons, regions in ascending id order."""

    year: int
    regions: tuple
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.regions),):
            raise DataError("values must align with regions")
        if list(self.regions) != sorted(self.regions) or len(set(self.regions)) != len(self.regions):
            raise DataError("regions must be unique and sorted; use RateField.from_mapping")
        present = vals[~np.isnan(vals)]
        if np.any(present < 0) or np.any(np.isinf(present)):
            raise DataError(f"rates for {self.year} must be finite and >= 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_mapping(cls, year: int, values: Mapping) -> "RateField":
        items = sorted((parse_region_id(k), _to_float(v)) for k, v in values.items())
        return cls(int(year), tuple(k for k, _ in items), np.array([v for _, v in items], dtype=float))

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    def is_complete(self) -> bool:
        return not self.missing.any()

    def __len__(self):
        return len(self.regions)

    def __getitem__(self, region):
        v = self.values[self.regions.index(region)]
        return None if math.isnan(v) else float(v)

    def as_dict(self) -> dict:
        return {r: (None if math.isnan(v) else float(v)) for r, v in zip(self.regions, self.values)}

    def replace_values(self, values) -> "RateField":
        return RateField(self.year, self.regions, np.asarray(values, dtype=float))

    def aligned_to(self, regions: tuple) -> np.ndarray:
        """Values in the order of ``regions``; the region sets must match."""
        if tuple(regions) == self.regions:
            return np.array(self.values)
        if set(regions) != set(self.regions):
            extra = sorted(set(self.regions) ^ set(regions))[:5]
            raise RegionMismatch(f"region sets differ (e.g. {extra})")
        pos = {r: i for i, r in enumerate(self.regions)}
        return self.values[[pos[r] for r in regions]]

    def same_as(self, other: "RateField") -> bool:
        return (
            self.year == other.year
            and self.regions == other.regions
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


class RatePanel:
    """Consecutive years of :class:`RateField`."""

    def __init__(self, fields: Iterable[RateField]):
        by_year = {}
        for f in fields:
            if f.year in by_year:
                raise DataError(f"duplicate year {f.year}")
            by_year[f.year] = f
        years = sorted(by_year)
        if years and years != list(range(years[0], years[-1] + 1)):
            raise DataError(f"years must be contiguous, got {years}")
        self.fields = {y: by_year[y] for y in years}

    @property
    def years(self) -> tuple:
        return tuple(self.fields)

    def __getitem__(self, year) -> RateField:
        return self.fields[year]

    def __iter__(self):
        return iter(self.fields.values())

    def __len__(self):
        return len(self.fields)


def read_rates_csv(path) -> RatePanel:
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, ("fips", "year", "rate"), path)
        for row in reader:
            try:
                year = int(row["year"])
            except ValueError:
                raise MalformedRecord(f"bad year {row['year']!r}") from None
            rid = parse_region_id(_pad(row["fips"]))
            by_region = rows.setdefault(year, {})
            if rid in by_region:
                raise MalformedRecord(f"duplicate rate for {rid} in {year}")
            by_region[rid] = _to_float(row["rate"])
    return RatePanel(RateField.from_mapping(y, m) for y, m in rows.items())


def format_value(v: float) -> str:
    return "NA" if math.isnan(v) else repr(float(v))


def write_rates_csv(path, fields: Iterable[RateField]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "year", "rate"])
        for f in fields:
            for r, v in zip(f.regions, f.values):
                w.writerow([r, f.year, format_value(v)])


@dataclass(frozen=True, eq=False)
class FeaturePanel:
    """Covariate percentile ranks indexed ``values[year_index, region_index, feature_index]``."""

    years: tuple
    regions: tuple
    values: np.ndarray
    features: tuple = FEATURES

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (len(self.years), len(self.regions), len(self.features)):
            raise DataError(f"panel shape {vals.shape} does not match years/regions/features")
        if list(self.regions) != sorted(self.regions):
            raise DataError("regions must be sorted")
        present = vals[~np.isnan(vals)]
        if np.any(present < 0) or np.any(present > 100):
            raise DataError("covariate percentiles must lie in [0, 100]")
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        object.__setattr__(self, "values", vals)

    def matrix(self, year: int) -> np.ndarray:
        """The (regions, features) matrix for one year."""
        return self.values[self.years.index(year)]

    def column(self, year: int, feature: str) -> np.ndarray:
        return self.matrix(year)[:, self.features.index(feature)]

    def with_values(self, values, years=None) -> "FeaturePanel":
        return FeaturePanel(tuple(years if years is not None else self.years), self.regions, values, self.features)

    def aligned_to(self, regions: tuple) -> "FeaturePanel":
        if tuple(regions) == self.regions:
            return self
        if set(regions) != set(self.regions):
            raise RegionMismatch("covariate regions differ from the requested region set")
        pos = {r: i for i, r in enumerate(self.regions)}
        return FeaturePanel(self.years, tuple(regions), self.values[:, [pos[r] for r in regions], :], self.features)


def read_covariates_csv(path) -> FeaturePanel:
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, ("fips", "year", *FEATURES), path)
        for row in reader:
            rid = parse_region_id(_pad(row["fips"]))
            year = int(row["year"])
            if (year, rid) in cells:
                raise MalformedRecord(f"duplicate covariates for {rid} in {year}")
            cells[(year, rid)] = [_to_float(row[f]) for f in FEATURES]
    years = sorted({y for y, _ in cells})
    regions = sorted({r for _, r in cells})
    vals = np.full((len(years), len(regions), len(FEATURES)), np.nan)
    yi = {y: i for i, y in enumerate(years)}
    ri = {r: i for i, r in enumerate(regions)}
    for (y, r), row in cells.items():
        vals[yi[y], ri[r]] = row
    return FeaturePanel(tuple(years), tuple(regions), vals)


def write_covariates_csv(path, panel: FeaturePanel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "year", *panel.features])
        for yi, year in enumerate(panel.years):
            for ri, rid in enumerate(panel.regions):
                w.writerow([rid, year, *(format_value(v) for v in panel.values[yi, ri])])
