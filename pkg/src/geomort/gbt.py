"""Gradient-boosted regression trees with a mean-absolute-error split gain.

A node's loss is the mean absolute deviation of its targets from the node
mean, and a split ``x_j <= h`` is worth

    gain = L(parent) - (n_left / n) * L(left) - (n_right / n) * L(right)

Leaves predict the mean of their targets. Boosting fits each tree to the
current residuals and adds it with a learning rate. Feature importance is
the total gain of the splits on each feature, normalized per year.

The split scan runs in numba: for every prefix of a feature-sorted node it
needs the sum of absolute deviations from the prefix mean, which a Fenwick
tree over target ranks yields in O(log n) per candidate threshold.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np

from .errors import EmptyData, InsufficientData, NoSplits
from .fields import FEATURES
from .reports import rank_order

# relative to the parent loss; absorbs rounding when no split truly helps
GAIN_TOL = 1e-12


@dataclass(frozen=True)
class SplitSpec:
    feature: int
    threshold: float
    gain: float


@numba.njit(cache=True)
def _bit_add(cnt, sm, pos, value):
    i = pos + 1
    n = cnt.shape[0]
    while i < n:
        cnt[i] += 1
        sm[i] += value
        i += i & (-i)


@numba.njit(cache=True)
def _bit_query(cnt, sm, pos):
    # count and sum over ranks [0, pos)
    c = 0
    s = 0.0
    i = pos
    while i > 0:
        c += cnt[i]
        s += sm[i]
        i -= i & (-i)
    return c, s


@numba.njit(cache=True)
def _scan_splits(X, y_all, order, min_leaf):
    # order[:, j] lists the node's rows of X sorted by feature j
    n, p = order.shape
    idx = order[:, 0]
    yn = np.empty(n)
    for r in range(n):
        yn[r] = y_all[idx[r]]
    # centering keeps the prefix arithmetic well conditioned; deviations are shift invariant
    yn -= yn.mean()
    tol = 0.0
    for r in range(n):
        tol += abs(yn[r])
    # a later candidate must beat the incumbent by more than rounding noise,
    # so exact ties keep the lower feature index / lower threshold
    tol *= 1e-11
    oy = np.argsort(yn, kind="mergesort")
    ys = yn[oy]
    # rank and centred target, looked up by row of X
    rank = np.empty(X.shape[0], np.int64)
    yc = np.empty(X.shape[0])
    for r in range(n):
        rank[idx[oy[r]]] = r
        yc[idx[r]] = yn[r]
    cs = np.zeros(n + 1)
    for r in range(n):
        cs[r + 1] = cs[r] + ys[r]
    total = cs[n]
    cnt = np.zeros(n + 1, np.int64)
    sm = np.zeros(n + 1)

    best_sad = np.inf
    best_j = -1
    best_thr = 0.0
    for j in range(p):
        ox = order[:, j]
        cnt[:] = 0
        sm[:] = 0.0
        sum_l = 0.0
        for k in range(1, n):
            e = ox[k - 1]
            _bit_add(cnt, sm, rank[e], yc[e])
            sum_l += yc[e]
            if n - k < min_leaf:
                break
            if k < min_leaf:
                continue
            lo_x = X[e, j]
            hi_x = X[ox[k], j]
            if not lo_x < hi_x:
                continue
            m_l = sum_l / k
            pos = np.searchsorted(ys, m_l, side="right")
            c_l, s_l = _bit_query(cnt, sm, pos)
            sad_l = m_l * c_l - s_l + (sum_l - s_l) - m_l * (k - c_l)
            n_r = n - k
            sum_r = total - sum_l
            m_r = sum_r / n_r
            pos_r = np.searchsorted(ys, m_r, side="right")
            c_lr, s_lr = _bit_query(cnt, sm, pos_r)
            c_r = pos_r - c_lr
            s_r = cs[pos_r] - s_lr
            sad_r = m_r * c_r - s_r + (sum_r - s_r) - m_r * (n_r - c_r)
            sad = sad_l + sad_r
            if sad < best_sad - tol:
                best_sad = sad
                best_j = j
                thr = 0.5 * (lo_x + hi_x)
                best_thr = thr if thr < hi_x else lo_x
    return best_j, best_thr


def _feature_orders(X: np.ndarray) -> np.ndarray:
    return np.argsort(X, axis=0, kind="stable")


def mae_loss(y: np.ndarray) -> float:
    """Mean absolute deviation of ``y`` from its mean (0 for an empty set)."""
    if len(y) == 0:
        return 0.0
    return float(np.abs(y - y.mean()).mean())


def split_gain(y: np.ndarray, left: np.ndarray) -> float:
    """Gain of partitioning ``y`` into ``y[left]`` and ``y[~left]``."""
    n = len(y)
    yl, yr = y[left], y[~left]
    return mae_loss(y) - (len(yl) / n * mae_loss(yl) + len(yr) / n * mae_loss(yr))


def find_best_split(node_targets, node_features, min_leaf: int = 1) -> SplitSpec | None:
    """Gain-maximizing ``(feature, threshold)`` over every feature and every
    midpoint between consecutive distinct values, or ``None`` when no split
    leaves ``min_leaf`` samples per side with positive gain.

    Ties go to the lower feature index, then the lower threshold.
    """
    y = np.ascontiguousarray(node_targets, dtype=float)
    X = np.ascontiguousarray(node_features, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ValueError("features must be (n_samples, n_features) matching targets")
    return _best_split(X, y, _feature_orders(X), min_leaf)


def _best_split(X, y, order, min_leaf) -> SplitSpec | None:
    # X, y are the full training arrays; order holds the node's rows per feature
    min_leaf = max(int(min_leaf), 1)
    rows = order[:, 0]
    yn = y[rows]
    if len(rows) < 2 * min_leaf or np.ptp(yn) == 0:
        return None
    j, thr = _scan_splits(X, y, order, min_leaf)
    if j < 0:
        return None
    gain = split_gain(yn, X[rows, j] <= thr)
    if not gain > GAIN_TOL * mae_loss(yn):
        return None
    return SplitSpec(int(j), float(thr), float(gain))


class RegressionTree:
    """Binary tree in flat arrays; node 0 is the root, ``feature == -1`` marks a leaf."""

    def __init__(self, feature, threshold, gain, left, right, value, n_samples):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.gain = np.asarray(gain, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.n_samples = np.asarray(n_samples, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))
        return d(0)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self, i: int = 0, feature_names: Sequence[str] | None = None) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i]), "n": int(self.n_samples[i])}
        j = int(self.feature[i])
        out = {"feature": j}
        if feature_names is not None:
            out["feature_name"] = feature_names[j]
        out.update(
            threshold=float(self.threshold[i]),
            gain=float(self.gain[i]),
            n=int(self.n_samples[i]),
            left=self.to_dict(int(self.left[i]), feature_names),
            right=self.to_dict(int(self.right[i]), feature_names),
        )
        return out


def grow_tree(targets, features, max_depth: int = 3, min_leaf: int = 1, orders=None) -> RegressionTree:
    """Grow a tree by recursive best splits; leaves hold the mean target.

    ``orders`` may pass in ``argsort(features, axis=0, kind="stable")`` when
    many trees share one feature matrix.
    """
    y = np.ascontiguousarray(targets, dtype=float)
    X = np.ascontiguousarray(features, dtype=float)
    if len(y) == 0:
        raise EmptyData("cannot grow a tree on no data")
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ValueError("features must be (n_samples, n_features) matching targets")
    if orders is None:
        orders = _feature_orders(X)
    nodes = {k: [] for k in ("feature", "threshold", "gain", "left", "right", "value", "n_samples")}

    def new_node(idx):
        for k, v in (("feature", -1), ("threshold", 0.0), ("gain", 0.0), ("left", -1), ("right", -1),
                     ("value", float(y[idx].mean())), ("n_samples", len(idx))):
            nodes[k].append(v)
        return len(nodes["feature"]) - 1

    stack = [(new_node(np.arange(len(y))), orders, 0)]
    while stack:
        node, order, depth = stack.pop()
        if depth >= max_depth:
            continue
        split = _best_split(X, y, order, min_leaf)
        if split is None:
            continue
        go_left = X[:, split.feature] <= split.threshold
        # stable partition of every sorted column keeps both children sorted
        m = go_left[order]
        n_left = int(m[:, 0].sum())
        lo = order.T[m.T].reshape(order.shape[1], n_left).T
        ro = order.T[~m.T].reshape(order.shape[1], len(order) - n_left).T
        nodes["feature"][node] = split.feature
        nodes["threshold"][node] = split.threshold
        nodes["gain"][node] = split.gain
        lnode, rnode = new_node(np.sort(lo[:, 0])), new_node(np.sort(ro[:, 0]))
        nodes["left"][node], nodes["right"][node] = lnode, rnode
        # right pushed first so the left subtree is numbered first
        stack.append((rnode, np.ascontiguousarray(ro), depth + 1))
        stack.append((lnode, np.ascontiguousarray(lo), depth + 1))
    return RegressionTree(**nodes)


@dataclass(frozen=True)
class GbtParams:
    n_trees: int = 100
    max_depth: int = 3
    min_leaf: int = 5
    learning_rate: float = 0.1


DEFAULT_GRID = tuple(
    GbtParams(t, d, m) for t, d, m in itertools.product((50, 100, 200), (3, 4, 6), (5, 20))
)


@dataclass
class GbtEnsemble:
    base_prediction: float
    trees: list
    learning_rate: float
    params: GbtParams
    train_mae: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        out = np.full(len(X), self.base_prediction)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def staged_predict(self, X, stages: Iterable[int]) -> dict:
        """Predictions after each requested number of trees."""
        want = sorted(set(int(s) for s in stages))
        out, pred = {}, np.full(len(X), self.base_prediction)
        if 0 in want:
            out[0] = pred.copy()
        for i, t in enumerate(self.trees, start=1):
            pred += self.learning_rate * t.predict(X)
            if i in want:
                out[i] = pred.copy()
        return out

    def truncated(self, n_trees: int) -> "GbtEnsemble":
        return GbtEnsemble(self.base_prediction, self.trees[:n_trees], self.learning_rate,
                           GbtParams(n_trees, self.params.max_depth, self.params.min_leaf, self.learning_rate),
                           self.train_mae[:n_trees + 1])

    def to_dict(self, feature_names: Sequence[str] | None = FEATURES) -> dict:
        return {
            "base_prediction": self.base_prediction,
            "learning_rate": self.learning_rate,
            "params": asdict(self.params),
            "trees": [t.to_dict(0, feature_names) for t in self.trees],
        }


def boost(train_features, train_targets, params: GbtParams = GbtParams()) -> GbtEnsemble:
    """Fit ``params.n_trees`` trees in sequence, each to the current residuals."""
    X = np.ascontiguousarray(train_features, dtype=float)
    y = np.asarray(train_targets, dtype=float)
    if len(y) == 0:
        raise EmptyData("cannot boost on no data")
    if not 0 < params.learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")
    base = float(y.mean())
    pred = np.full(len(y), base)
    trees, history = [], [float(np.abs(y - pred).mean())]
    orders = _feature_orders(X)
    for _ in range(params.n_trees):
        tree = grow_tree(y - pred, X, params.max_depth, params.min_leaf, orders)
        pred = pred + params.learning_rate * tree.predict(X)
        trees.append(tree)
        history.append(float(np.abs(y - pred).mean()))
    return GbtEnsemble(base, trees, params.learning_rate, params, history)


def fold_assignment(n: int, folds: int = 5, seed: int = 0) -> np.ndarray:
    """Seeded random partition; fold sizes differ by at most one."""
    if n < folds:
        raise InsufficientData(f"{n} samples cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        fold_of[chunk] = f
    return fold_of


@dataclass
class CVResult:
    predictions: np.ndarray
    params: GbtParams
    fold_of: np.ndarray
    grid_scores: list
    ensembles: list


def cv_predict(features, targets, folds: int = 5, grid: Sequence[GbtParams] = DEFAULT_GRID, seed: int = 0) -> CVResult:
    """Grid search by k-fold validation MAE, then out-of-fold predictions.

    Every configuration is scored by its mean validation MAE over the same
    seeded folds; the first configuration with the lowest score wins. Each
    region's prediction comes from the chosen configuration's model for the
    fold that held it out. Configurations differing only in tree count share
    one boosting run, read at each count (boosting is sequential, so the
    first ``t`` trees of a longer run are exactly a ``t``-tree model).
    """
    X = np.ascontiguousarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if len(grid) == 0:
        raise ValueError("empty hyperparameter grid")
    fold_of = fold_assignment(len(y), folds, seed)

    groups = {}
    for gi, p in enumerate(grid):
        groups.setdefault((p.max_depth, p.min_leaf, p.learning_rate), []).append(gi)

    oof = {gi: np.empty(len(y)) for gi in range(len(grid))}
    fold_mae = {gi: [] for gi in range(len(grid))}
    fitted = {}
    for (depth, leaf, lr), members in groups.items():
        longest = max(grid[gi].n_trees for gi in members)
        for f in range(folds):
            tr, va = fold_of != f, fold_of == f
            ens = boost(X[tr], y[tr], GbtParams(longest, depth, leaf, lr))
            staged = ens.staged_predict(X[va], [grid[gi].n_trees for gi in members])
            for gi in members:
                p = staged[grid[gi].n_trees]
                oof[gi][va] = p
                fold_mae[gi].append(float(np.abs(p - y[va]).mean()))
            fitted[(depth, leaf, lr, f)] = ens

    scores = [float(np.mean(fold_mae[gi])) for gi in range(len(grid))]
    best = min(range(len(grid)), key=lambda gi: (scores[gi], gi))
    chosen = grid[best]
    ensembles = [
        fitted[(chosen.max_depth, chosen.min_leaf, chosen.learning_rate, f)].truncated(chosen.n_trees)
        for f in range(folds)
    ]
    return CVResult(oof[best], chosen, fold_of, list(zip(grid, scores)), ensembles)


def total_gain(ensembles, n_features: int) -> np.ndarray:
    """Summed split gain per feature over every node of every tree."""
    if isinstance(ensembles, GbtEnsemble):
        ensembles = [ensembles]
    g = np.zeros(n_features)
    for ens in ensembles:
        for t in ens.trees:
            internal = t.feature >= 0
            np.add.at(g, t.feature[internal], t.gain[internal])
    return g


@dataclass(frozen=True)
class ImportanceReport:
    features: tuple
    years: tuple
    yearly: np.ndarray
    average: np.ndarray
    order: list
    raw: np.ndarray


def gain_importance(ensembles: Mapping, features: Sequence[str] = FEATURES) -> ImportanceReport:
    """Normalized total-gain importance per year and its cross-year average.

    ``ensembles`` maps year to a :class:`GbtEnsemble` or to a list of them
    (e.g. the fold models of one year, pooled as one model).
    """
    if not ensembles:
        raise EmptyData("no ensembles given")
    years = tuple(sorted(ensembles))
    raw = np.vstack([total_gain(ensembles[y], len(features)) for y in years])
    totals = raw.sum(axis=1)
    if np.any(totals <= 0):
        bad = [y for y, t in zip(years, totals) if t <= 0]
        raise NoSplits(f"no split with positive gain in years {bad}")
    yearly = raw / totals[:, None]
    avg = yearly.mean(axis=0)
    return ImportanceReport(tuple(features), years, yearly, avg, rank_order(tuple(features), avg, True), raw)


def write_model_json(path, ensemble: GbtEnsemble, feature_names: Sequence[str] = FEATURES) -> None:
    with open(path, "w") as fh:
        json.dump(ensemble.to_dict(feature_names), fh, indent=1)
        fh.write("\n")


def tree_from_dict(d: dict) -> RegressionTree:
    """Rebuild a tree from :meth:`RegressionTree.to_dict` output."""
    cols = {k: [] for k in ("feature", "threshold", "gain", "left", "right", "value", "n_samples")}

    def visit(node):
        i = len(cols["feature"])
        leaf = "leaf" in node
        for k, v in (("feature", -1 if leaf else node["feature"]), ("threshold", 0.0 if leaf else node["threshold"]),
                     ("gain", 0.0 if leaf else node["gain"]), ("left", -1), ("right", -1),
                     ("value", node["leaf"] if leaf else math.nan), ("n_samples", node["n"])):
            cols[k].append(v)
        if not leaf:
            cols["left"][i] = visit(node["left"])
            cols["right"][i] = visit(node["right"])
        return i

    visit(d)
    return RegressionTree(**cols)
