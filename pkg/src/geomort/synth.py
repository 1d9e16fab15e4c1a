"""Synthetic county-like data for tests, demos and end-to-end runs.

Nothing here pretends to be real data. Regions sit on a lattice of
half-degree cells with queen adjacency, grouped into rectangular "states";
rates and covariates are smooth random fields so that spatial imputation has
something to exploit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .fields import FEATURES, FeaturePanel, RateField, RatePanel, write_covariates_csv, write_rates_csv
from .geo import RegionGraph, load_graph, write_graph

SVI_RELEASE_YEARS = (2010, 2014, 2016, 2018, 2020, 2022)


def lattice_graph(
    nrows: int,
    ncols: int,
    n_cells: int | None = None,
    state_block: tuple = (10, 10),
    n_islands: int = 0,
    origin: tuple = (30.0, -110.0),
    spacing: float = 0.5,
) -> tuple:
    """Queen-adjacent lattice filled row-major with ``n_cells`` cells.

    Returns ``(graph, cells)`` where ``cells[k] = (row, col)`` for the k-th
    region in ``graph.regions`` order; islands get ``(-1, -1)``.
    """
    n_cells = nrows * ncols if n_cells is None else n_cells
    if n_cells > nrows * ncols:
        raise ValueError("n_cells exceeds the lattice")
    rc = [(k // ncols, k % ncols) for k in range(n_cells)]
    block_cols = -(-ncols // state_block[1])
    state_idx = [(r // state_block[0]) * block_cols + c // state_block[1] for r, c in rc]
    codes = {s: i + 1 for i, s in enumerate(sorted(set(state_idx)))}
    if len(codes) + (1 if n_islands else 0) > 99:
        raise ValueError("too many states for 2-digit codes")
    counter = {}
    ids = []
    for s in state_idx:
        counter[s] = counter.get(s, 0) + 1
        ids.append(f"{codes[s]:02d}{counter[s]:03d}")
    pos = {cell: rid for cell, rid in zip(rc, ids)}
    edges = []
    for (r, c), rid in pos.items():
        for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
            nb = pos.get((r + dr, c + dc))
            if nb is not None:
                edges.append((rid, nb))
    lat0, lon0 = origin
    cents = [(rid, lat0 - r * spacing, lon0 + c * spacing) for (r, c), rid in pos.items()]
    island_code = len(codes) + 1
    cell_of = dict(zip(ids, rc))
    for k in range(n_islands):
        rid = f"{island_code:02d}{k + 1:03d}"
        cents.append((rid, lat0 - (nrows + 2 + k) * spacing, lon0 - (3 + 2 * k) * spacing))
        cell_of[rid] = (-1, -1)
    graph = load_graph(edges, cents)
    return graph, [cell_of[r] for r in graph.regions]


def smooth_field(shape, length_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance Gaussian random field with the given correlation length."""
    z = ndimage.gaussian_filter(rng.standard_normal(shape), length_scale, mode="wrap")
    return (z - z.mean()) / z.std()


def _gather(grid: np.ndarray, cells, fill_rng):
    out = np.empty(len(cells))
    for k, (r, c) in enumerate(cells):
        out[k] = grid[r, c] if r >= 0 else fill_rng.standard_normal()
    return out


def smooth_rate_field(graph, cells, shape, rng, year=2014, base=12.0, spread=0.6, length_scale=3.0):
    g = _gather(smooth_field(shape, length_scale, rng), cells, rng)
    return RateField(year, graph.regions, base * np.exp(spread * g))


def percentile_rank(x: np.ndarray) -> np.ndarray:
    """Percentile ranks in [0, 100] (average rank for ties)."""
    from scipy.stats import rankdata

    if len(x) == 1:
        return np.array([50.0])
    return 100.0 * (rankdata(x) - 1) / (len(x) - 1)


def synthetic_study(
    seed: int = 0,
    n_regions: int = 3144,
    years=range(2010, 2023),
    n_islands: int = 3,
    zero_fraction: float = 0.2,
):
    """A complete synthetic study: graph, true rates, covariates.

    Rates depend on a few covariates (unemployment and no-vehicle push rates
    up, aged 65+ pulls them down) plus a smooth spatial effect and a yearly
    trend, and a share of low-population regions report exactly zero.

    Returns a dict with ``graph``, ``cells``, ``rates`` (complete
    :class:`RatePanel`) and ``covariates`` (complete :class:`FeaturePanel`
    over every year).
    """
    rng = np.random.default_rng(seed)
    years = list(years)
    n_cells = n_regions - n_islands
    ncols = int(np.ceil(np.sqrt(n_cells)))
    nrows = -(-n_cells // ncols)
    graph, cells = lattice_graph(nrows, ncols, n_cells, state_block=(8, 8), n_islands=n_islands)
    shape = (nrows, ncols)

    base_fields = [smooth_field(shape, 4.0, rng) for _ in FEATURES]
    drift_fields = [smooth_field(shape, 6.0, rng) for _ in FEATURES]
    raw = np.empty((len(years), len(graph.regions), len(FEATURES)))
    for ti in range(len(years)):
        step = ti / max(len(years) - 1, 1)
        for j in range(len(FEATURES)):
            grid = base_fields[j] + 0.4 * step * drift_fields[j] + 0.1 * rng.standard_normal(shape)
            raw[ti, :, j] = percentile_rank(_gather(grid, cells, rng))
    covariates = FeaturePanel(tuple(years), graph.regions, raw)

    spatial = _gather(smooth_field(shape, 3.0, rng), cells, rng)
    population = _gather(smooth_field(shape, 2.0, rng), cells, rng)
    ui, vi, ai = FEATURES.index("unemployment"), FEATURES.index("no_vehicle"), FEATURES.index("age_65_and_older")
    fields = []
    for ti, year in enumerate(years):
        x = raw[ti] / 100.0
        log_rate = (
            np.log(9.0) + 0.08 * ti + 0.9 * (x[:, ui] - 0.5) + 0.5 * (x[:, vi] - 0.5)
            - 0.4 * (x[:, ai] - 0.5) + 0.35 * spatial + 0.25 * rng.standard_normal(len(x))
        )
        rate = np.exp(log_rate)
        small = population < np.quantile(population, zero_fraction)
        zero = small & (rng.random(len(x)) < 0.8)
        rate[zero] = 0.0
        fields.append(RateField(year, graph.regions, np.round(rate, 2)))
    return {"graph": graph, "cells": cells, "rates": RatePanel(fields), "covariates": covariates}


def cdc_style_censor(rates: RatePanel, fraction: float, seed: int) -> RatePanel:
    """Censor roughly ``fraction`` of each year's regions (zeros stay observed)."""
    rng = np.random.default_rng(seed)
    out = []
    for f in rates:
        v = np.array(f.values)
        hit = (rng.random(len(v)) < fraction) & (v > 0)
        v[hit] = np.nan
        out.append(f.replace_values(v))
    return RatePanel(out)


def write_study(directory, seed: int = 0, n_regions: int = 3144, censor_fraction: float = 0.5) -> dict:
    """Write a synthetic study to CSV files laid out for the command line.

    Files: ``adjacency.csv``, ``centroids.csv``, ``rates_true.csv``,
    ``rates_censored.csv``, ``covariates_releases.csv`` (release years only,
    with one unusable 2018 cell and two missing cells),
    ``rates_old_structure.csv``, ``crosswalk.csv`` (the last state split
    into a pseudo "old" structure) and ``regions.geojson`` (centroid points).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    study = synthetic_study(seed, n_regions)
    graph, rates, cov = study["graph"], study["rates"], study["covariates"]
    write_graph(graph, d / "adjacency.csv", d / "centroids.csv")
    write_rates_csv(d / "rates_true.csv", rates)
    write_rates_csv(d / "rates_censored.csv", cdc_style_censor(rates, censor_fraction, seed + 1))

    keep = [cov.years.index(y) for y in SVI_RELEASE_YEARS if y in cov.years]
    vals = cov.values[keep].copy()
    unusable_region = cov.regions[len(cov.regions) // 2]
    if 2018 in SVI_RELEASE_YEARS:
        vals[SVI_RELEASE_YEARS.index(2018), len(cov.regions) // 2, :] = np.nan
    vals[0, 5, 2] = np.nan
    vals[-1, 17, 7] = np.nan
    write_covariates_csv(d / "covariates_releases.csv", cov.with_values(vals, [cov.years[i] for i in keep]))

    crosswalk, old_field = _pseudo_restructure(graph, rates[rates.years[-2]], seed)
    with open(d / "crosswalk.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_fips", "target_fips", "weight"])
        w.writerows((s, t, repr(wt)) for s, t, wt in crosswalk)
    write_rates_csv(d / "rates_old_structure.csv", [old_field])
    points = {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": {"fips": r},
             "geometry": {"type": "Point", "coordinates": [graph.centroid[r][1], graph.centroid[r][0]]}}
            for r in graph.regions
        ],
    }
    with open(d / "regions.geojson", "w") as fh:
        json.dump(points, fh, separators=(",", ":"))
        fh.write("\n")
    return {"graph": graph, "unusable": [(unusable_region, 2018)], **study}


def _pseudo_restructure(graph: RegionGraph, field: RateField, seed: int):
    """Split the last lattice state into pairs of "old" regions with random overlaps."""
    rng = np.random.default_rng(seed + 7)
    states = sorted({r[:2] for r in graph.regions if graph.neighbors[r]})
    target_state = states[-1]
    targets = [r for r in graph.regions if r[:2] == target_state]
    old_code = f"{int(target_state) + 40:02d}"
    n_old = max(1, len(targets) // 2)
    old_ids = [f"{old_code}{k + 1:03d}" for k in range(n_old)]
    entries = []
    values = {}
    for k, t in enumerate(targets):
        a = old_ids[min(k // 2, n_old - 1)]
        b = old_ids[min(k // 2 + 1, n_old - 1)]
        w = float(np.round(rng.uniform(0.2, 1.0), 4))
        entries.append((a, t, w))
        if b != a:
            entries.append((b, t, float(np.round(1.0 - w + 0.05, 4))))
    for k, oid in enumerate(old_ids):
        members = targets[2 * k: 2 * k + 2] or targets[-1:]
        values[oid] = float(np.mean([field[m] for m in members]))
    rest = {r: field[r] for r in graph.regions if r[:2] != target_state}
    return entries, RateField.from_mapping(field.year, {**rest, **values})
