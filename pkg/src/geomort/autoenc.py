"""Conv-augmented autoencoder for next-year rate prediction, differentiated by hand.

The network maps a (regions, features) covariate matrix to one rate per
region::

    z  = X @ w_c + b_c                 per-region feature mix (the "conv")
    h1 = relu(W_e1 @ z  + b_e1)        encode
    h2 =      W_e2 @ h1 + b_e2
    h3 = relu(W_d3 @ h2 + b_d3)        decode
    y  =      W_d4 @ h3 + b_d4

Training minimizes the mean absolute error with one Adam (or plain gradient)
step per (year t covariates, year t+1 rates) pair in chronological order,
with a triangular cyclical step size, and keeps the parameters with the best
validation loss. The L1 gradient is only ``sign(r)/n``, which is why plain
steps barely move a 3144-output layer in 100 epochs.

Attribution uses expected gradients: for output region i and feature j,
``phi[i, j] = E_{b, a}[ sum_k (x_kj - b_kj) * d y_i / d x_kj (b + a (x - b)) ]``,
which makes ``sum_j phi[i, j]`` approach ``y_i(x) - E_b y_i(b)``.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyBaseline, EmptyTrainingSet, StaleCache
from .fields import FEATURES
from .reports import fmt6, rank_order, write_summary_csv, write_yearly_csv

TENSORS = ("w_c", "b_c", "W_e1", "b_e1", "W_e2", "b_e2", "W_d3", "b_d3", "W_d4", "b_d4")
_MAGIC = b"GMAECKPT"


class NetParams:
    """Network tensors plus a version counter that invalidates old caches."""

    def __init__(self, w_c, b_c, W_e1, b_e1, W_e2, b_e2, W_d3, b_d3, W_d4, b_d4):
        self.w_c = np.asarray(w_c, dtype=float)
        self.b_c = float(b_c)
        self.W_e1 = np.asarray(W_e1, dtype=float)
        self.b_e1 = np.asarray(b_e1, dtype=float)
        self.W_e2 = np.asarray(W_e2, dtype=float)
        self.b_e2 = np.asarray(b_e2, dtype=float)
        self.W_d3 = np.asarray(W_d3, dtype=float)
        self.b_d3 = np.asarray(b_d3, dtype=float)
        self.W_d4 = np.asarray(W_d4, dtype=float)
        self.b_d4 = np.asarray(b_d4, dtype=float)
        self.version = 0
        self._check()

    def _check(self):
        n, d1 = self.W_d4.shape
        d2 = self.W_e2.shape[0]
        shapes = {
            "w_c": (len(self.w_c),), "W_e1": (d1, n), "b_e1": (d1,), "W_e2": (d2, d1), "b_e2": (d2,),
            "W_d3": (d1, d2), "b_d3": (d1,), "W_d4": (n, d1), "b_d4": (n,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in TENSORS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} is not finite")

    @property
    def n_regions(self) -> int:
        return self.W_d4.shape[0]

    @property
    def n_features(self) -> int:
        return len(self.w_c)

    @property
    def dims(self) -> tuple:
        return self.W_e1.shape[0], self.W_e2.shape[0]

    def tensors(self) -> dict:
        return {k: getattr(self, k) for k in TENSORS}

    def copy(self) -> "NetParams":
        return NetParams(**{k: np.array(v) for k, v in self.tensors().items()})

    def touch(self):
        self.version += 1

    def allclose(self, other: "NetParams", **kw) -> bool:
        return all(np.allclose(getattr(self, k), getattr(other, k), **kw) for k in TENSORS)

    def equals(self, other: "NetParams") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in TENSORS)


def init_params(n_regions: int, n_features: int = 13, d1: int = 1024, d2: int = 128, seed: int = 0) -> NetParams:
    """Fan-in scaled uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, seeded."""
    if not 0 < d2 < d1 < n_regions:
        raise ValueError(f"dims must compress: 0 < d2 ({d2}) < d1 ({d1}) < regions ({n_regions})")
    rng = np.random.default_rng(seed)

    def u(fan_in, *shape):
        a = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-a, a, size=shape)

    return NetParams(
        w_c=u(n_features, n_features), b_c=float(u(n_features, 1)[0]),
        W_e1=u(n_regions, d1, n_regions), b_e1=u(n_regions, d1),
        W_e2=u(d1, d2, d1), b_e2=u(d1, d2),
        W_d3=u(d2, d1, d2), b_d3=u(d2, d1),
        W_d4=u(d1, n_regions, d1), b_d4=u(d1, n_regions),
    )


@dataclass
class Cache:
    X: np.ndarray
    z: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    h3: np.ndarray
    y: np.ndarray
    params_id: int
    version: int


def _check_input(params: NetParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (params.n_regions, params.n_features):
        raise DimensionMismatch(f"input shape {X.shape}, network expects {(params.n_regions, params.n_features)}")
    return X


def forward(params: NetParams, X) -> tuple:
    """Predictions for covariate matrix ``X`` (regions x features, scaled to [0, 1])."""
    X = _check_input(params, X)
    z = X @ params.w_c + params.b_c
    a1 = params.W_e1 @ z + params.b_e1
    h1 = np.maximum(a1, 0.0)
    a2 = params.W_e2 @ h1 + params.b_e2
    a3 = params.W_d3 @ a2 + params.b_d3
    h3 = np.maximum(a3, 0.0)
    y = params.W_d4 @ h3 + params.b_d4
    return y, Cache(X, z, a1, h1, a2, a3, h3, y, id(params), params.version)


def predict(params: NetParams, X) -> np.ndarray:
    return forward(params, X)[0]


def l1_loss(y_hat, y) -> float:
    y_hat, y = np.asarray(y_hat, dtype=float), np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise DimensionMismatch(f"prediction shape {y_hat.shape} vs target shape {y.shape}")
    return float(np.abs(y_hat - y).mean())


def backward(params: NetParams, cache: Cache, Y) -> dict:
    """Gradients of :func:`l1_loss` w.r.t. every tensor.

    ``sign(0)`` and ``relu'(0)`` are taken as 0.
    """
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCache("cache was produced by different or since-modified parameters")
    Y = np.asarray(Y, dtype=float)
    if Y.shape != cache.y.shape:
        raise DimensionMismatch(f"target shape {Y.shape} vs output shape {cache.y.shape}")
    gy = np.sign(cache.y - Y) / len(Y)
    g = {"W_d4": np.outer(gy, cache.h3), "b_d4": gy}
    ga3 = (params.W_d4.T @ gy) * (cache.a3 > 0)
    g["W_d3"] = np.outer(ga3, cache.a2)
    g["b_d3"] = ga3
    ga2 = params.W_d3.T @ ga3
    g["W_e2"] = np.outer(ga2, cache.h1)
    g["b_e2"] = ga2
    ga1 = (params.W_e2.T @ ga2) * (cache.a1 > 0)
    g["W_e1"] = np.outer(ga1, cache.z)
    g["b_e1"] = ga1
    gz = params.W_e1.T @ ga1
    g["w_c"] = cache.X.T @ gz
    g["b_c"] = float(gz.sum())
    return g


def cyclic_lr(epoch: int, base: float, peak: float, cycle: int) -> float:
    """Triangular wave: ``base`` at the start of each cycle, ``peak`` half way."""
    half = cycle / 2.0
    pos = epoch % cycle
    return base + (peak - base) * max(0.0, 1.0 - abs(pos / half - 1.0))


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    lr_base: float = 1e-4
    lr_peak: float = 1e-2
    lr_cycle: int = 10
    seed: int = 0
    validation_year: int = 2015
    d1: int = 1024
    d2: int = 128
    # "median" starts the output bias at the median training target (the L1-optimal constant)
    output_bias: str = "median"
    optimizer: str = "adam"

    def __post_init__(self):
        if not 0 <= self.patience < self.max_epochs:
            raise ValueError("patience must be below max_epochs")
        if not 0 < self.lr_base <= self.lr_peak:
            raise ValueError("need 0 < lr_base <= lr_peak")
        if self.lr_cycle < 1:
            raise ValueError("lr_cycle must be positive")
        if self.output_bias not in ("median", "init"):
            raise ValueError("output_bias must be 'median' or 'init'")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


class EarlyStopping:
    """Tracks the best validation loss; a loss above the best counts as worse.

    A loss equal to the best is neither a new best nor worse and leaves the
    counter alone.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.worse = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record ``loss``; return True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.worse = loss, epoch, 0
        elif loss > self.best:
            self.worse += 1
        return self.worse >= self.patience


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_l1: float
    val_l1: float
    lr: float
    best_so_far: float


@dataclass
class TrainResult:
    params: NetParams
    log: list
    best_epoch: int
    stopped_early: bool


@dataclass(frozen=True)
class YearPair:
    """Covariates of ``year`` (scaled) and the rates of ``year + 1``."""
    year: int
    X: np.ndarray
    Y: np.ndarray

    @property
    def target_year(self) -> int:
        return self.year + 1


def train(
    pairs: Sequence[YearPair],
    config: TrainConfig = TrainConfig(),
    params: NetParams | None = None,
    evaluate: Callable[[NetParams], float] | None = None,
) -> TrainResult:
    """Chronological per-pair gradient steps with early stopping on validation L1.

    The pair whose target year is ``config.validation_year`` is held out.
    ``evaluate`` replaces the validation loss (the held-out pair's L1) when given.
    """
    pairs = sorted(pairs, key=lambda p: p.year)
    val = [p for p in pairs if p.target_year == config.validation_year]
    fit = [p for p in pairs if p.target_year != config.validation_year]
    if not fit:
        raise EmptyTrainingSet("no training pairs outside the validation year")
    if evaluate is None:
        if not val:
            raise EmptyTrainingSet(f"no pair targets the validation year {config.validation_year}")
        vp = val[0]
        evaluate = lambda p: l1_loss(predict(p, vp.X), vp.Y)  # noqa: E731
    for p in pairs:
        if np.isnan(p.X).any() or np.isnan(p.Y).any():
            raise ValueError(f"pair {p.year} has missing values")
    if params is None:
        n, f = fit[0].X.shape
        params = init_params(n, f, config.d1, config.d2, config.seed)
        if config.output_bias == "median":
            params.b_d4 = np.full(n, float(np.median(np.concatenate([p.Y for p in fit]))))
    else:
        params = params.copy()

    step = Adam(params) if config.optimizer == "adam" else _sgd_step
    stopper = EarlyStopping(config.patience)
    best = params.copy()
    log = []
    stopped = False
    for epoch in range(1, config.max_epochs + 1):
        lr = cyclic_lr(epoch - 1, config.lr_base, config.lr_peak, config.lr_cycle)
        losses = []
        for p in fit:
            y, cache = forward(params, p.X)
            losses.append(l1_loss(y, p.Y))
            grads = backward(params, cache, p.Y)
            step(params, grads, lr)
        v = float(evaluate(params))
        stop = stopper.update(epoch, v)
        if stopper.best_epoch == epoch:
            best = params.copy()
        log.append(EpochRecord(epoch, float(np.mean(losses)), v, lr, stopper.best))
        if stop:
            stopped = True
            break
    return TrainResult(best, log, stopper.best_epoch, stopped)


def _sgd_step(params: NetParams, grads: dict, lr: float):
    for k in TENSORS:
        if k == "b_c":
            params.b_c -= lr * grads[k]
        else:
            getattr(params, k)[...] -= lr * grads[k]
    params.touch()


class Adam:
    """Adam with the usual defaults; the step size comes from the schedule."""

    def __init__(self, params: NetParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros(np.shape(getattr(params, k))) for k in TENSORS}
        self.v = {k: np.zeros(np.shape(getattr(params, k))) for k in TENSORS}

    def __call__(self, params: NetParams, grads: dict, lr: float):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in TENSORS:
            g = grads[k]
            m = self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            upd = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if k == "b_c":
                params.b_c -= float(upd)
            else:
                getattr(params, k)[...] -= upd
        params.touch()


# ---- attribution ----------------------------------------------------------

def output_jvp(params: NetParams, X, dZ) -> np.ndarray:
    """Jacobian of the outputs w.r.t. the conv outputs at ``X``, applied to columns ``dZ``."""
    _, c = forward(params, X)
    u = (params.W_e1 @ dZ) * (c.a1 > 0)[:, None]
    u = params.W_d3 @ (params.W_e2 @ u)
    u = u * (c.a3 > 0)[:, None]
    return params.W_d4 @ u


@dataclass(frozen=True)
class AttributionReport:
    features: tuple
    years: tuple
    shap: dict
    yearly: np.ndarray
    average: np.ndarray
    order: list


def expected_gradients(params: NetParams, X, baselines: Sequence, n_samples: int = 200, seed: int = 0) -> np.ndarray:
    """Per-(region, feature) attributions of the region's predicted rate.

    Draw s uses baseline ``s mod len(baselines)`` (so each baseline gets an
    equal share) and an interpolation point ``a ~ U(0, 1)`` from a seeded
    generator. Since the conv mixes features per region, the input gradient
    of feature j is ``w_c[j]`` times the gradient at the conv output, and all
    13 feature directions go through the network as one Jacobian product.
    """
    X = _check_input(params, X)
    if len(baselines) == 0:
        raise EmptyBaseline("no baselines given")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    B = [_check_input(params, b) for b in baselines]
    alphas = np.random.default_rng(seed).uniform(0.0, 1.0, size=n_samples)
    acc = np.zeros_like(X)
    # summed in draw order for a reproducible result
    for s in range(n_samples):
        b = B[s % len(B)]
        D = (X - b) * params.w_c[None, :]
        acc += output_jvp(params, b + alphas[s] * (X - b), D)
    return acc / n_samples


def attribution_report(
    params: NetParams,
    inputs: dict,
    baselines: Sequence,
    n_samples: int = 200,
    seed: int = 0,
    features: Sequence[str] = FEATURES,
) -> AttributionReport:
    """Expected gradients for each year's input; yearly importance is mean |phi|."""
    if not inputs:
        raise ValueError("no input years")
    years = tuple(sorted(inputs))
    shap = {y: expected_gradients(params, inputs[y], baselines, n_samples, seed) for y in years}
    yearly = np.vstack([np.abs(shap[y]).mean(axis=0) for y in years])
    avg = yearly.mean(axis=0)
    return AttributionReport(tuple(features), years, shap, yearly, avg, rank_order(tuple(features), avg, True))


def write_attribution(prefix, report: AttributionReport) -> None:
    """``<prefix>_yearly.csv`` (feature,year,mean_abs_shap) and ``<prefix>_summary.csv``."""
    write_yearly_csv(f"{prefix}_yearly.csv", report.features, report.years, report.yearly, "mean_abs_shap")
    write_summary_csv(f"{prefix}_summary.csv", report.features, report.average, report.order)


def write_training_log(path, log: Iterable[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_l1", "val_l1", "lr", "best_so_far"])
        for r in log:
            w.writerow([r.epoch, fmt6(r.train_l1), fmt6(r.val_l1), fmt6(r.lr), fmt6(r.best_so_far)])


# ---- checkpoint -----------------------------------------------------------

def save_params(path, params: NetParams) -> None:
    """Magic, header length, JSON header with shapes, then float64 little-endian data."""
    tensors = params.tensors()
    header = {
        "dims": list(params.dims),
        "n_regions": params.n_regions,
        "n_features": params.n_features,
        "tensors": [[k, list(np.shape(tensors[k]))] for k in TENSORS],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for k in TENSORS:
            fh.write(np.asarray(tensors[k], dtype="<f8").tobytes())


def load_params(path) -> NetParams:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a parameter checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        out = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(float)
            out[name] = arr.reshape(shape) if shape else float(arr[0])
    return NetParams(**out)
