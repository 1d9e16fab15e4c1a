"""County adjacency substrate: region ids, queen adjacency, centroids.

A :class:`RegionGraph` is immutable and canonical: regions are kept in
ascending id order and neighbor sets are frozen, so two graphs built from
the same records in any order compare equal and drive identical numerics.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse

from .errors import InsufficientMainland, MalformedRecord, MissingCentroid

EARTH_RADIUS_KM = 6371.0088


def parse_region_id(value) -> str:
    """Validate a 5-digit region id (FIPS style) and return it as a string."""
    code = str(value).strip()
    if len(code) != 5 or not code.isdigit():
        raise MalformedRecord(f"bad region id {value!r}: expected 5 decimal digits")
    return code


def _parse_coord(value, lo, hi, what):
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise MalformedRecord(f"bad {what} {value!r}") from None
    if not (lo <= x <= hi) or math.isnan(x):
        raise MalformedRecord(f"{what} {x} outside [{lo}, {hi}]")
    return x


@dataclass(frozen=True, eq=False)
class RegionGraph:
    regions: tuple
    neighbors: Mapping[str, frozenset]
    centroid: Mapping[str, tuple]
    constructed: Mapping[str, frozenset] = field(default_factory=dict)

    def state_of(self, region: str) -> str:
        return region[:2]

    def __len__(self):
        return len(self.regions)

    def __contains__(self, region):
        return region in self.centroid

    def __eq__(self, other):
        if not isinstance(other, RegionGraph):
            return NotImplemented
        return (
            self.regions == other.regions
            and dict(self.neighbors) == dict(other.neighbors)
            and dict(self.centroid) == dict(other.centroid)
            and {k: v for k, v in self.constructed.items() if v}
            == {k: v for k, v in other.constructed.items() if v}
        )

    __hash__ = None

    @property
    def islands(self) -> tuple:
        return tuple(r for r in self.regions if not self.neighbors[r])

    def neighborhood(self, region: str) -> frozenset:
        """Queen neighbors, or the constructed neighborhood for an island."""
        nbrs = self.neighbors[region]
        if nbrs:
            return nbrs
        return self.constructed.get(region, frozenset())

    @cached_property
    def index(self) -> dict:
        return {r: i for i, r in enumerate(self.regions)}

    @cached_property
    def coords(self) -> np.ndarray:
        """(n, 2) array of (lat, lon) in region order."""
        return np.array([self.centroid[r] for r in self.regions], dtype=float).reshape(-1, 2)

    @cached_property
    def states(self) -> np.ndarray:
        return np.array([r[:2] for r in self.regions])

    @cached_property
    def neighborhood_matrix(self) -> sparse.csr_matrix:
        """Row i holds ones at the columns of region i's effective neighborhood."""
        rows, cols = [], []
        for i, r in enumerate(self.regions):
            for nb in sorted(self.neighborhood(r)):
                rows.append(i)
                cols.append(self.index[nb])
        n = len(self.regions)
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    def records(self):
        """Serialize to ``(adjacency_records, centroid_records)``; each edge appears once."""
        adjacency = [
            (a, b) for a in self.regions for b in sorted(self.neighbors[a]) if a < b
        ]
        centroids = [(r, *self.centroid[r]) for r in self.regions]
        return adjacency, centroids


def load_graph(adjacency_records: Iterable, centroid_records: Iterable) -> RegionGraph:
    """Build a symmetric :class:`RegionGraph` from edge and centroid records.

    Edges may be listed in one direction or both. Self-loops, malformed ids and
    out-of-range coordinates raise :class:`MalformedRecord`; an edge touching a
    region with no centroid raises :class:`MissingCentroid`.
    """
    centroid = {}
    for rec in centroid_records:
        try:
            raw_id, lat, lon = rec
        except (TypeError, ValueError):
            raise MalformedRecord(f"centroid record {rec!r} is not (id, lat, lon)") from None
        rid = parse_region_id(raw_id)
        pt = (_parse_coord(lat, -90.0, 90.0, "latitude"), _parse_coord(lon, -180.0, 180.0, "longitude"))
        if rid in centroid and centroid[rid] != pt:
            raise MalformedRecord(f"conflicting centroids for {rid}")
        centroid[rid] = pt

    nbrs = {r: set() for r in centroid}
    for rec in adjacency_records:
        try:
            raw_a, raw_b = rec
        except (TypeError, ValueError):
            raise MalformedRecord(f"adjacency record {rec!r} is not a pair") from None
        a, b = parse_region_id(raw_a), parse_region_id(raw_b)
        if a == b:
            raise MalformedRecord(f"self-loop on {a}")
        for r in (a, b):
            if r not in centroid:
                raise MissingCentroid(f"region {r} appears in adjacency but has no centroid")
        nbrs[a].add(b)
        nbrs[b].add(a)

    regions = tuple(sorted(centroid))
    return RegionGraph(
        regions=regions,
        neighbors={r: frozenset(nbrs[r]) for r in regions},
        centroid={r: centroid[r] for r in regions},
        constructed={},
    )


def geodesic_distance(a, b) -> float:
    """Great-circle (haversine) distance in km between two (lat, lon) points."""
    return float(haversine(np.asarray(a, float), np.asarray(b, float)))


def haversine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized haversine over broadcastable ``(..., 2)`` arrays of degrees."""
    lat1, lon1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lat2, lon2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def attach_island_neighbors(graph: RegionGraph, k: int = 5) -> RegionGraph:
    """Give every island the ``k`` nearest non-island regions as a constructed neighborhood.

    Distance ties break by ascending region id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    islands = graph.islands
    if not islands:
        return graph
    mainland = [r for r in graph.regions if graph.neighbors[r]]
    if len(mainland) < k:
        raise InsufficientMainland(f"need {k} mainland regions, have {len(mainland)}")
    main_xy = np.array([graph.centroid[r] for r in mainland])
    ids = np.array(mainland)
    constructed = {}
    for isl in islands:
        d = haversine(np.asarray(graph.centroid[isl], float)[None, :], main_xy)
        # mainland is already sorted, so a stable sort on distance breaks ties by id
        order = np.argsort(d, kind="stable")[:k]
        constructed[isl] = frozenset(ids[order].tolist())
    return replace(graph, constructed=constructed)


def read_adjacency_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, ("fips", "neighbor_fips"), path)
        return [(_pad(row["fips"]), _pad(row["neighbor_fips"])) for row in reader]


def read_centroid_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, ("fips", "lat", "lon"), path)
        return [(_pad(row["fips"]), row["lat"], row["lon"]) for row in reader]


def read_graph(adjacency_path, centroid_path) -> RegionGraph:
    return load_graph(read_adjacency_csv(adjacency_path), read_centroid_csv(centroid_path))


def write_graph(graph: RegionGraph, adjacency_path, centroid_path) -> None:
    adjacency, centroids = graph.records()
    with open(adjacency_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "neighbor_fips"])
        w.writerows(adjacency)
    with open(centroid_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "lat", "lon"])
        for rid, lat, lon in centroids:
            w.writerow([rid, repr(lat), repr(lon)])


def _pad(value: str) -> str:
    # spreadsheets routinely strip the leading zero of FIPS codes
    v = value.strip()
    return v.zfill(5) if v.isdigit() and len(v) < 5 else v


def _require_columns(reader: csv.DictReader, cols, path):
    missing = [c for c in cols if c not in (reader.fieldnames or ())]
    if missing:
        raise MalformedRecord(f"{Path(path).name}: missing columns {missing}")
