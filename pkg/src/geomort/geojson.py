"""Attach rates, map percentiles and anomaly labels to a GeoJSON FeatureCollection."""
from __future__ import annotations

import copy
import json

import numpy as np

from .anomaly import AnomalyLabeling
from .errors import FipsMismatch, MalformedRecord
from .fields import RateField
from .geo import parse_region_id


def empirical_percentile(values) -> np.ndarray:
    """Percent of the other values strictly below, plus half of the ties.

    ``100 * (below + 0.5 * ties) / (n - 1)`` where ``ties`` excludes the value
    itself, so the unique maximum maps to 100 and the unique minimum to 0.
    A single value gets 100. NaN stays NaN and is left out of the ranking.
    """
    v = np.asarray(values, dtype=float)
    out = np.full(v.shape, np.nan)
    ok = ~np.isnan(v)
    x = v[ok]
    n = len(x)
    if n == 0:
        return out
    if n == 1:
        out[ok] = 100.0
        return out
    s = np.sort(x)
    below = np.searchsorted(s, x, side="left")
    ties = np.searchsorted(s, x, side="right") - below - 1
    out[ok] = 100.0 * (below + 0.5 * ties) / (n - 1)
    return out


def emit_geojson(base: dict, field: RateField | None = None, labeling: AnomalyLabeling | None = None) -> dict:
    """Copy of ``base`` whose features gain ``rate``/``percentile`` and/or ``anomaly``.

    Every feature must carry a ``fips`` property naming a region of ``field``
    (and of ``labeling``'s year, which covers the same regions); unmatched
    features raise :class:`FipsMismatch` listing them. Missing rates become
    ``null``. Geometry is left as is.
    """
    if field is None and labeling is None:
        raise ValueError("nothing to attach: pass a field and/or a labeling")
    if base.get("type") != "FeatureCollection" or not isinstance(base.get("features"), list):
        raise MalformedRecord("base must be a GeoJSON FeatureCollection")
    out = copy.deepcopy(base)
    ids = []
    for f in out["features"]:
        props = f.get("properties") or {}
        if "fips" not in props:
            raise MalformedRecord("feature without a 'fips' property")
        ids.append(parse_region_id(props["fips"]))

    if field is not None:
        index = {r: i for i, r in enumerate(field.regions)}
        missing = sorted({r for r in ids if r not in index})
        if missing:
            raise FipsMismatch(missing)
        pct = empirical_percentile(field.values)
    for f, rid in zip(out["features"], ids):
        props = f.setdefault("properties", {})
        if field is not None:
            i = index[rid]
            v = field.values[i]
            props["rate"] = None if np.isnan(v) else float(v)
            props["percentile"] = None if np.isnan(pct[i]) else float(pct[i])
        if labeling is not None:
            props["anomaly"] = labeling.label_of(rid)
    return out


def read_geojson(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_geojson(path, collection: dict) -> None:
    with open(path, "w") as fh:
        json.dump(collection, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
