"""Covariate gap filling across years, and boundary-change crosswalks."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DataError, MalformedRecord, MissingSource, RegionMismatch, UnbracketedGap, ZeroWeightTarget
from .fields import FeaturePanel, RateField, _to_float
from .geo import RegionGraph, _pad, _require_columns, parse_region_id
from .imputation import neighbor_mean_impute


def linear_gap_fill(
    panel: FeaturePanel,
    observed_years: Iterable[int],
    unusable: Iterable[tuple] = (),
    years: Iterable[int] | None = None,
) -> FeaturePanel:
    """Linearly interpolate covariates for years between observed releases.

    Year ``a + m`` between consecutive usable observations ``a < b`` gets
    ``v_a + m * (v_b - v_a) / (b - a)``. ``unusable`` lists ``(region, year)``
    cells whose observation is discarded, so that region bridges the gap
    from its neighbouring usable releases instead (e.g. a 2018 collection
    error filled from 2016 and 2020). Missing values at a usable release stay
    missing and propagate into the adjacent gaps; use
    :func:`impute_feature_gaps` afterwards.

    The output spans ``years`` (default: first to last observed year).
    Results are clamped to [0, 100].
    """
    observed = sorted(set(int(y) for y in observed_years))
    if not observed:
        raise ValueError("observed_years is empty")
    absent = [y for y in observed if y not in panel.years]
    if absent:
        raise DataError(f"observed years {absent} are not in the panel")
    out_years = list(range(observed[0], observed[-1] + 1)) if years is None else sorted(int(y) for y in years)

    bad = {}
    for region, year in unusable:
        rid = parse_region_id(region)
        if rid not in panel.regions:
            raise RegionMismatch(f"unusable cell names unknown region {rid}")
        bad.setdefault(rid, set()).add(int(year))

    groups = {}
    for ri, rid in enumerate(panel.regions):
        usable = tuple(y for y in observed if y not in bad.get(rid, ()))
        groups.setdefault(usable, []).append(ri)

    src = {y: panel.values[panel.years.index(y)] for y in observed}
    out = np.full((len(out_years), len(panel.regions), len(panel.features)), np.nan)
    for usable, rows in groups.items():
        if not usable:
            raise UnbracketedGap(f"no usable observation for regions {[panel.regions[r] for r in rows[:5]]}")
        for oi, y in enumerate(out_years):
            if y in usable:
                out[oi, rows] = src[y][rows]
                continue
            a = max((u for u in usable if u < y), default=None)
            b = min((u for u in usable if u > y), default=None)
            if a is None or b is None:
                raise UnbracketedGap(f"year {y} is not bracketed by observations")
            va, vb = src[a][rows], src[b][rows]
            out[oi, rows] = va + (y - a) * (vb - va) / (b - a)
    np.clip(out, 0.0, 100.0, out=out)
    return panel.with_values(out, out_years)


def impute_feature_gaps(panel: FeaturePanel, graph: RegionGraph) -> FeaturePanel:
    """Fill missing covariate cells with the neighbor-mean imputer, per (year, feature)."""
    panel = panel.aligned_to(graph.regions)
    out = np.array(panel.values)
    for yi, year in enumerate(panel.years):
        for j in range(len(panel.features)):
            col = out[yi, :, j]
            if np.isnan(col).any():
                filled = neighbor_mean_impute(RateField(year, graph.regions, col), graph)
                out[yi, :, j] = filled.values
    return panel.with_values(out)


@dataclass(frozen=True, eq=False)
class Crosswalk:
    """Area-overlap weights from old (source) regions to new (target) regions."""

    sources: tuple
    targets: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not (len(self.sources) == len(self.targets) == len(w)):
            raise MalformedRecord("crosswalk columns have different lengths")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise MalformedRecord("crosswalk weights must be finite and >= 0")
        totals = {}
        for t, wt in zip(self.targets, w):
            totals[t] = totals.get(t, 0.0) + wt
        empty = sorted(t for t, tot in totals.items() if tot <= 0)
        if empty:
            raise ZeroWeightTarget(f"targets with zero total weight: {empty[:10]}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_entries(cls, entries: Iterable[tuple]) -> "Crosswalk":
        rows = [(parse_region_id(s), parse_region_id(t), _to_float(w)) for s, t, w in entries]
        return cls(tuple(r[0] for r in rows), tuple(r[1] for r in rows), np.array([r[2] for r in rows]))

    @classmethod
    def identity(cls, regions: Iterable[str]) -> "Crosswalk":
        regions = list(regions)
        return cls(tuple(regions), tuple(regions), np.ones(len(regions)))

    @property
    def target_ids(self) -> tuple:
        return tuple(sorted(set(self.targets)))


def apply_crosswalk(field: RateField, crosswalk: Crosswalk, passthrough: bool = False) -> RateField:
    """Re-express a rate field on new regions as an area-weighted mean of sources.

    Rates are intensive, so each target gets ``sum(w*v) / sum(w)`` over the
    sources that overlap it. With ``passthrough``, regions of ``field`` that
    are neither a source nor a target are copied unchanged.
    """
    values = field.as_dict()
    num, den, lo, hi = {}, {}, {}, {}
    for s, t, w in zip(crosswalk.sources, crosswalk.targets, crosswalk.weights):
        v = values.get(s)
        if v is None:
            raise MissingSource(f"source region {s} has no rate in {field.year}")
        num[t] = num.get(t, 0.0) + w * v
        den[t] = den.get(t, 0.0) + w
        if w > 0:
            lo[t] = min(lo.get(t, v), v)
            hi[t] = max(hi.get(t, v), v)
    # the clip only absorbs rounding; the weighted mean is convex in exact arithmetic
    out = {t: min(max(num[t] / den[t], lo[t]), hi[t]) for t in num}
    if passthrough:
        touched = set(crosswalk.sources) | set(crosswalk.targets)
        out.update({r: v for r, v in values.items() if r not in touched})
    return RateField.from_mapping(field.year, out)


def read_crosswalk_csv(path) -> Crosswalk:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, ("source_fips", "target_fips", "weight"), path)
        return Crosswalk.from_entries(
            (_pad(r["source_fips"]), _pad(r["target_fips"]), r["weight"]) for r in reader
        )
