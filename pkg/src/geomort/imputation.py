"""Filling MISSING rates: step-wise queen-neighbor mean plus three baselines."""
from __future__ import annotations

import numpy as np

from .errors import EmptyNeighborhood, NoDataAvailable, UnreachableRegion
from .fields import RateField
from .geo import RegionGraph, haversine


def neighbor_mean_impute(field: RateField, graph: RegionGraph) -> RateField:
    """Impute missing rates from the mean of available queen neighbors.

    Work proceeds in sweeps of passes k = 1, 2, ..., up to the largest
    neighborhood. At each pass start the missing-neighbor counts are
    recomputed, and every missing region with exactly k missing neighbors and
    at least one available neighbor is filled with the mean of its available
    neighbors, all reads coming from a snapshot taken at pass start. Sweeps
    repeat while they make progress. Regions whose neighbors are all
    available are filled last, from their full neighborhood. Islands use
    their constructed neighborhood (see :func:`geomort.geo.attach_island_neighbors`).
    """
    v = field.aligned_to(graph.regions)
    if not np.isnan(v).any():
        return field
    adj = graph.neighborhood_matrix
    deg = np.asarray(adj.sum(axis=1)).ravel()

    lonely = np.isnan(v) & (deg == 0)
    if lonely.any():
        names = [graph.regions[i] for i in np.flatnonzero(lonely)]
        raise EmptyNeighborhood(f"missing regions with no neighborhood: {names[:10]}")

    max_k = int(deg.max())
    while np.isnan(v).any():
        progress = False
        for k in range(1, max_k + 1):
            miss = np.isnan(v)
            n_miss = adj @ miss.astype(float)
            sel = miss & (n_miss == k) & (deg - n_miss >= 1)
            if sel.any():
                sums = adj @ np.where(miss, 0.0, v)
                v[sel] = sums[sel] / (deg[sel] - n_miss[sel])
                progress = True
        if progress:
            continue
        # every neighbor available: these cannot influence any pending region
        miss = np.isnan(v)
        n_miss = adj @ miss.astype(float)
        settled = miss & (n_miss == 0)
        if not settled.any():
            stuck = [graph.regions[i] for i in np.flatnonzero(miss)]
            raise UnreachableRegion(f"no available data reachable from {stuck[:10]}")
        v[settled] = (adj @ np.where(miss, 0.0, v))[settled] / deg[settled]

    return field.replace_values(v)


def national_mean_impute(field: RateField) -> RateField:
    v = np.array(field.values)
    miss = np.isnan(v)
    if not miss.any():
        return field
    if miss.all():
        raise NoDataAvailable(f"no available rates in {field.year}")
    v[miss] = v[~miss].mean()
    return field.replace_values(v)


def state_mean_impute(field: RateField, graph: RegionGraph | None = None) -> RateField:
    """Fill each missing rate with its state's available mean, else the national mean.

    States come from the first two digits of the region id, which is also what
    ``graph.state_of`` reports; ``graph`` is accepted for interface symmetry.
    """
    v = np.array(field.values)
    miss = np.isnan(v)
    if not miss.any():
        return field
    if miss.all():
        raise NoDataAvailable(f"no available rates in {field.year}")
    state_of = graph.state_of if graph is not None else (lambda r: r[:2])
    states = np.array([state_of(r) for r in field.regions])
    national = v[~miss].mean()
    for s in np.unique(states[miss]):
        in_state = states == s
        donors = in_state & ~miss
        v[in_state & miss] = v[donors].mean() if donors.any() else national
    return field.replace_values(v)


def idw_impute(
    field: RateField,
    graph: RegionGraph,
    power: float = 1.0,
    max_donors: int | None = 8,
    radius_km: float | None = None,
) -> RateField:
    """Inverse-distance-weighted imputation from available regions.

    Each missing region gets ``sum(w*v)/sum(w)`` with ``w = d**-power`` over
    the donor set: the ``max_donors`` nearest available regions (ties by id;
    ``None`` keeps every available region), optionally restricted to those
    within ``radius_km``. With power 1 and no cut, distant donors outweigh
    near ones in two dimensions, so the default keeps a queen-sized set.
    A donor at zero distance takes over: the target adopts the mean of all
    coincident donors.
    """
    if power <= 0:
        raise ValueError("power must be positive")
    v = field.aligned_to(graph.regions)
    miss = np.isnan(v)
    if not miss.any():
        return field
    if miss.all():
        raise NoDataAvailable(f"no available rates in {field.year}")

    donor_xy = graph.coords[~miss]
    donor_v = v[~miss]
    targets = np.flatnonzero(miss)
    for start in range(0, len(targets), 512):
        chunk = targets[start:start + 512]
        d = haversine(graph.coords[chunk][:, None, :], donor_xy[None, :, :])
        for row, i in enumerate(chunk):
            v[i] = _idw_one(d[row], donor_v, power, max_donors, radius_km, graph.regions[i])
    return field.replace_values(v)


def _idw_one(d, values, power, max_donors, radius_km, name):
    keep = np.ones(len(d), dtype=bool)
    if radius_km is not None:
        keep &= d <= radius_km
    idx = np.flatnonzero(keep)
    if max_donors is not None and len(idx) > max_donors:
        idx = idx[np.argsort(d[idx], kind="stable")[:max_donors]]
    if len(idx) == 0:
        raise NoDataAvailable(f"no donors for {name} within the donor limits")
    d, values = d[idx], values[idx]
    zero = d == 0
    if zero.any():
        return values[zero].mean()
    w = d ** -power
    return np.dot(w, values) / w.sum()


IMPUTERS = {
    "national_mean": lambda f, g, **kw: national_mean_impute(f),
    "state_mean": lambda f, g, **kw: state_mean_impute(f, g),
    "idw": lambda f, g, **kw: idw_impute(f, g, **kw),
    "neighbor_mean": lambda f, g, **kw: neighbor_mean_impute(f, g),
}
