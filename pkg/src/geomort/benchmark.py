"""Censoring simulation, imputation scoring and model-efficacy metrics.

Masks come from a SplitMix64 stream so any implementation can reproduce them
bit for bit: with ``state = seed`` and ``GOLDEN = 0x9E3779B97F4A7C15``, the
k-th draw (k = 1, 2, ...) mixes ``seed + k*GOLDEN (mod 2**64)`` through::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

and maps it to ``u = (z >> 11) * 2**-53`` in [0, 1). Regions are visited in
ascending id order; region k is masked when ``u_k < fraction``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyField, EmptyMask, IncompleteInput, MalformedRecord, RegionMismatch
from .fields import RateField, RatePanel
from .geo import RegionGraph
from .imputation import IMPUTERS
from .reports import fmt6

GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1

METHODS = ("national_mean", "state_mean", "idw", "neighbor_mean")


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` raw 64-bit outputs of SplitMix64 started at ``seed``."""
    seed = int(seed) & _MASK64
    k = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + k * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def uniform_stream(seed: int, n: int) -> np.ndarray:
    return (splitmix64(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


@dataclass(frozen=True)
class CensorMask:
    year: int
    masked: frozenset
    seed: int
    fraction: float

    def __len__(self):
        return len(self.masked)


@dataclass(frozen=True)
class MetricBundle:
    mae: float
    rmse: float
    mpe: float
    mape: float
    n: int = 0
    excluded_zero_truth: float = 0


def censor(field: RateField, fraction: float, seed: int):
    """Mask each region independently with probability ``fraction``."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if not field.is_complete():
        raise IncompleteInput(f"field {field.year} already has {field.n_missing} missing rates")
    hit = uniform_stream(seed, len(field)) < fraction
    v = np.array(field.values)
    v[hit] = np.nan
    mask = CensorMask(field.year, frozenset(np.array(field.regions)[hit].tolist()), int(seed), float(fraction))
    return field.replace_values(v), mask


def score(imputed: RateField, truth: RateField, mask: CensorMask) -> MetricBundle:
    """MAE, RMSE, MPE and MAPE over the masked regions.

    Percentage errors use ``(imputed - true) / true`` and skip regions whose
    true rate is zero; how many were skipped is reported.
    """
    if not mask.masked:
        raise EmptyMask("no masked regions to score")
    if imputed.regions != truth.regions:
        raise RegionMismatch("imputed and true fields cover different regions")
    sel = np.isin(np.array(truth.regions), sorted(mask.masked))
    y_hat, y = imputed.values[sel], truth.values[sel]
    if np.isnan(y_hat).any() or np.isnan(y).any():
        raise IncompleteInput("scoring requires complete imputed and true values on the mask")
    err = y_hat - y
    nz = y != 0
    if nz.any():
        rel = err[nz] / y[nz]
        mpe, mape = 100.0 * rel.mean(), 100.0 * np.abs(rel).mean()
    else:
        mpe = mape = math.nan
    return MetricBundle(
        mae=float(np.abs(err).mean()),
        rmse=float(np.sqrt((err ** 2).mean())),
        mpe=float(mpe),
        mape=float(mape),
        n=int(sel.sum()),
        excluded_zero_truth=int((~nz).sum()),
    )


@dataclass(frozen=True)
class BenchmarkRow:
    year: int
    method: str
    seed_count: int
    metrics: MetricBundle


def compare_methods(
    truth: RatePanel,
    graph: RegionGraph,
    fraction: float = 0.5,
    seeds: Sequence[int] = tuple(range(20)),
    methods: Sequence[str] = METHODS,
    idw_options: dict | None = None,
) -> list:
    """Censor each year once per seed, impute with every method, average the scores.

    All methods see the same mask for a given (year, seed). Each seed is used
    as given for every year.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    unknown = set(methods) - set(IMPUTERS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    idw_options = dict(idw_options or {})
    rows = []
    for field in truth:
        per_method = {m: [] for m in methods}
        for seed in seeds:
            censored, mask = censor(field, fraction, seed)
            if not mask.masked:
                raise EmptyMask(f"seed {seed} masked nothing in {field.year}")
            for m in methods:
                kw = idw_options if m == "idw" else {}
                imputed = IMPUTERS[m](censored, graph, **kw)
                per_method[m].append(score(imputed, field, mask))
        for m in methods:
            rows.append(BenchmarkRow(field.year, m, len(seeds), _average(per_method[m])))
    return rows


def _average(bundles: list) -> MetricBundle:
    return MetricBundle(
        mae=float(np.mean([b.mae for b in bundles])),
        rmse=float(np.mean([b.rmse for b in bundles])),
        mpe=float(np.mean([b.mpe for b in bundles])),
        mape=float(np.mean([b.mape for b in bundles])),
        n=int(round(np.mean([b.n for b in bundles]))),
        excluded_zero_truth=float(np.mean([b.excluded_zero_truth for b in bundles])),
    )


@dataclass(frozen=True)
class EfficacyReport:
    regions: tuple
    error: np.ndarray
    accuracy: np.ndarray
    avg_error: float
    max_error: float
    avg_accuracy: float


def efficacy_report(predictions: RateField, truth: RateField) -> EfficacyReport:
    """Absolute residuals, and accuracy normalized by the largest residual.

    ``accuracy_i = 100 * (1 - error_i / max_error)``; if every error is zero
    every accuracy is 100.
    """
    if predictions.regions != truth.regions:
        raise RegionMismatch("predictions and truth cover different regions")
    if not (predictions.is_complete() and truth.is_complete()):
        raise IncompleteInput("efficacy needs complete predictions and truth")
    err = np.abs(predictions.values - truth.values)
    top = err.max() if len(err) else 0.0
    acc = np.full_like(err, 100.0) if top == 0 else 100.0 * (1.0 - err / top)
    return EfficacyReport(
        regions=truth.regions,
        error=err,
        accuracy=acc,
        avg_error=float(err.mean()),
        max_error=float(top),
        avg_accuracy=float(acc.mean()),
    )


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    std: float
    min: float
    q1: float
    median: float
    q3: float
    max: float


def summary_stats(field: RateField) -> SummaryStats:
    """Mean, sample std (n-1), min, linearly interpolated quartiles, max."""
    if len(field) == 0:
        raise EmptyField("empty field")
    if not field.is_complete():
        raise IncompleteInput("summary statistics need a complete field")
    v = field.values
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return SummaryStats(
        mean=float(v.mean()),
        std=float(v.std(ddof=1)) if len(v) > 1 else 0.0,
        min=float(v.min()),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        max=float(v.max()),
    )


def write_benchmark_csv(path, rows: Iterable[BenchmarkRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "method", "seed_count", "mae", "rmse", "mpe", "mape", "excluded_zero_truth"])
        for r in rows:
            m = r.metrics
            w.writerow([r.year, r.method, r.seed_count, fmt6(m.mae), fmt6(m.rmse), fmt6(m.mpe), fmt6(m.mape),
                        fmt6(m.excluded_zero_truth)])


def write_mask(path, mask: CensorMask) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={mask.seed} fraction={mask.fraction!r} year={mask.year}\n")
        fh.write("fips\n")
        for r in sorted(mask.masked):
            fh.write(r + "\n")


def read_mask(path) -> CensorMask:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise MalformedRecord("mask file must start with a '# seed=... fraction=...' comment")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        if fh.readline().strip() != "fips":
            raise MalformedRecord("mask file is missing its 'fips' header")
        masked = frozenset(line.strip() for line in fh if line.strip())
    return CensorMask(int(meta.get("year", 0)), masked, int(meta["seed"]), float(meta["fraction"]))
