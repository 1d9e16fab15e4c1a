"""CSV writers shared by the ranking-style outputs.

Reports carry six significant digits; data panels and checkpoints keep full
precision (see :mod:`geomort.fields`).
"""
from __future__ import annotations

import csv
import math

import numpy as np


def fmt6(x) -> str:
    if x is None or (isinstance(x, (float, np.floating)) and math.isnan(x)):
        return "NA"
    return f"{float(x):.6g}"


def write_yearly_csv(path, features, years, yearly: np.ndarray, value_name: str) -> None:
    """Long format ``feature,year,<value_name>``; ``yearly`` is (years, features)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "year", value_name])
        for j, feat in enumerate(features):
            for yi, year in enumerate(years):
                w.writerow([feat, year, fmt6(yearly[yi, j])])


def write_summary_csv(path, features, average: np.ndarray, order) -> None:
    """``feature,average,rank`` in rank order (rank 1 first)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "average", "rank"])
        for rank, feat in enumerate(order, start=1):
            w.writerow([feat, fmt6(average[list(features).index(feat)]), rank])


def rank_order(features, average: np.ndarray, descending: bool) -> list:
    """Feature names sorted by ``average``; ties keep canonical feature order."""
    key = -np.asarray(average) if descending else np.asarray(average)
    return [features[j] for j in np.argsort(key, kind="stable")]
