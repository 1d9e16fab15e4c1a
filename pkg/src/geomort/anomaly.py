"""Distribution fitting on nonzero rates, hot/cold/zero labeling and covariate ranking.

Four positive-support families are fitted by maximum likelihood:

=================  ====================  ==============================
family             parameters            solver
=================  ====================  ==============================
lognormal          ``mu``, ``sigma``     closed form (log moments)
gamma              ``shape``, ``scale``  Newton on ``log k - digamma(k)``
weibull            ``shape``, ``scale``  bracketed Newton, profile score
inverse_gaussian   ``mean``, ``shape``   closed form
=================  ====================  ==============================

Density, CDF and quantile evaluation for a fitted family delegate to
:mod:`scipy.stats`; the estimators themselves do not.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import special, stats

from .errors import (
    AllFitsFailed,
    DataError,
    DegenerateSample,
    EmptyAnomalySet,
    GeomortError,
    IncompleteInput,
    NoConvergence,
    NonPositiveSample,
)
from .fields import FeaturePanel, RateField
from .reports import rank_order

FAMILIES = ("lognormal", "gamma", "weibull", "inverse_gaussian")
MIN_SAMPLES = 8
MAX_ITER = 200
RTOL = 1e-10
N_PARAMS = 2


@dataclass(frozen=True)
class FittedDistribution:
    family: str
    params: Mapping[str, float]
    n: int = 0
    log_likelihood: float = math.nan
    ks_statistic: float = math.nan
    aic: float = math.nan
    bic: float = math.nan

    @property
    def frozen(self):
        p = self.params
        if self.family == "lognormal":
            return stats.lognorm(s=p["sigma"], scale=math.exp(p["mu"]))
        if self.family == "gamma":
            return stats.gamma(a=p["shape"], scale=p["scale"])
        if self.family == "weibull":
            return stats.weibull_min(c=p["shape"], scale=p["scale"])
        if self.family == "inverse_gaussian":
            return stats.invgauss(mu=p["mean"] / p["shape"], scale=p["shape"])
        raise ValueError(f"unknown family {self.family!r}")

    def cdf(self, x):
        return self.frozen.cdf(x)

    def ppf(self, q):
        return self.frozen.ppf(q)

    def logpdf(self, x):
        return log_density(self.family, self.params, np.asarray(x, float))


def make_distribution(family: str, **params) -> FittedDistribution:
    """A distribution with given parameters and no fit diagnostics."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    _check_params(family, params)
    return FittedDistribution(family, dict(params))


def _check_params(family, params):
    positive = {"lognormal": ("sigma",), "gamma": ("shape", "scale"), "weibull": ("shape", "scale"),
                "inverse_gaussian": ("mean", "shape")}[family]
    for name in positive:
        if not params.get(name, 0) > 0 or not math.isfinite(params[name]):
            raise DegenerateSample(f"{family} parameter {name}={params.get(name)} must be positive and finite")


def log_density(family: str, params: Mapping[str, float], x: np.ndarray) -> np.ndarray:
    p = params
    lx = np.log(x)
    if family == "lognormal":
        mu, s = p["mu"], p["sigma"]
        return -lx - math.log(s) - 0.5 * math.log(2 * math.pi) - (lx - mu) ** 2 / (2 * s * s)
    if family == "gamma":
        k, th = p["shape"], p["scale"]
        return (k - 1) * lx - x / th - special.gammaln(k) - k * math.log(th)
    if family == "weibull":
        k, lam = p["shape"], p["scale"]
        return math.log(k / lam) + (k - 1) * (lx - math.log(lam)) - (x / lam) ** k
    if family == "inverse_gaussian":
        mu, lam = p["mean"], p["shape"]
        return 0.5 * (math.log(lam / (2 * math.pi)) - 3 * lx) - lam * (x - mu) ** 2 / (2 * mu * mu * x)
    raise ValueError(f"unknown family {family!r}")


def _validate(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < MIN_SAMPLES:
        raise DegenerateSample(f"need at least {MIN_SAMPLES} samples, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise DataError("samples must be finite")
    if np.any(x <= 0):
        raise NonPositiveSample("all samples must be > 0")
    if np.ptp(x) == 0:
        raise DegenerateSample("all samples are equal")
    return x


def _fit_gamma(x):
    s = math.log(x.mean()) - np.log(x).mean()
    if s <= 0:
        raise DegenerateSample("gamma: sample has no log-dispersion")
    k = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
    for _ in range(MAX_ITER):
        f = math.log(k) - special.digamma(k) - s
        fp = 1.0 / k - special.polygamma(1, k)
        step = f / fp
        k_new = k - step
        if k_new <= 0:
            k_new = k / 2
        if abs(k_new - k) <= RTOL * k_new:
            k = k_new
            break
        k = k_new
    else:
        raise NoConvergence("gamma shape did not converge")
    return {"shape": k, "scale": x.mean() / k}


def _fit_weibull(x):
    lx = np.log(x)
    lshift = lx - lx.max()
    mean_l = lshift.mean()

    def score(k):
        w = np.exp(k * lshift)
        sw = w.sum()
        m1 = np.dot(w, lshift) / sw
        m2 = np.dot(w, lshift * lshift) / sw
        return m1 - 1.0 / k - mean_l, (m2 - m1 * m1) + 1.0 / (k * k)

    sd = lx.std()
    k = math.pi / (math.sqrt(6) * sd)
    lo, hi = 0.0, math.inf
    for _ in range(MAX_ITER):
        g, gp = score(k)
        if g > 0:
            hi = min(hi, k)
        else:
            lo = max(lo, k)
        k_new = k - g / gp
        if not (lo < k_new < hi):
            k_new = 0.5 * (lo + hi) if math.isfinite(hi) else 2 * k
        if abs(k_new - k) <= RTOL * k_new:
            k = k_new
            break
        k = k_new
    else:
        raise NoConvergence("weibull shape did not converge")
    scale = math.exp(lx.max()) * np.mean(np.exp(k * lshift)) ** (1.0 / k)
    return {"shape": k, "scale": float(scale)}


def _fit_inverse_gaussian(x):
    mu = x.mean()
    inv = np.mean(1.0 / x - 1.0 / mu)
    if not inv > 0:
        raise DegenerateSample("inverse gaussian: no dispersion")
    return {"mean": float(mu), "shape": float(1.0 / inv)}


def _fit_lognormal(x):
    lx = np.log(x)
    return {"mu": float(lx.mean()), "sigma": float(lx.std())}


_SOLVERS = {
    "lognormal": _fit_lognormal,
    "gamma": _fit_gamma,
    "weibull": _fit_weibull,
    "inverse_gaussian": _fit_inverse_gaussian,
}


def fit_mle(samples, family: str) -> FittedDistribution:
    """Maximum-likelihood fit of one family, with KS/AIC/BIC diagnostics."""
    if family not in _SOLVERS:
        raise ValueError(f"unknown family {family!r}")
    x = _validate(samples)
    params = {k: float(v) for k, v in _SOLVERS[family](x).items()}
    _check_params(family, params)
    ll = float(log_density(family, params, x).sum())
    if not math.isfinite(ll):
        raise NoConvergence(f"{family}: non-finite log-likelihood at the fitted parameters")
    n = len(x)
    dist = FittedDistribution(family, params, n, ll)
    return FittedDistribution(
        family, params, n, ll,
        ks_statistic=ks_statistic(x, dist),
        aic=2 * N_PARAMS - 2 * ll,
        bic=N_PARAMS * math.log(n) - 2 * ll,
    )


def ks_statistic(samples, dist) -> float:
    """One-sample Kolmogorov-Smirnov distance between the ECDF and ``dist``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = len(x)
    if n == 0:
        raise DataError("ks_statistic needs at least one sample")
    cdf = np.asarray(dist.cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n))
    return float(min(max(d, 0.0), 1.0))


@dataclass(frozen=True)
class FitDiagnostics:
    family: str
    ok: bool
    aic: float = math.nan
    bic: float = math.nan
    ks: float = math.nan
    aic_rank: int | None = None
    bic_rank: int | None = None
    ks_rank: int | None = None
    error: str = ""


def select_best(samples):
    """Fit every family and pick the lowest AIC.

    Returns ``(best, table)``; ``table`` has one :class:`FitDiagnostics` per
    family in canonical order, with AIC, BIC and KS ranks among the families
    that fitted. Ties break lognormal, gamma, weibull, inverse gaussian.
    """
    fits, errors = {}, {}
    for fam in FAMILIES:
        try:
            fits[fam] = fit_mle(samples, fam)
        except GeomortError as exc:
            errors[fam] = f"{type(exc).__name__}: {exc}"
    if not fits:
        raise AllFitsFailed("; ".join(f"{k}: {v}" for k, v in errors.items()))

    def ranks(attr):
        order = sorted(fits, key=lambda f: (getattr(fits[f], attr), FAMILIES.index(f)))
        return {f: i + 1 for i, f in enumerate(order)}

    ra, rb, rk = ranks("aic"), ranks("bic"), ranks("ks_statistic")
    table = []
    for fam in FAMILIES:
        if fam in fits:
            f = fits[fam]
            table.append(FitDiagnostics(fam, True, f.aic, f.bic, f.ks_statistic, ra[fam], rb[fam], rk[fam]))
        else:
            table.append(FitDiagnostics(fam, False, error=errors[fam]))
    best = min(fits.values(), key=lambda f: (f.aic, FAMILIES.index(f.family)))
    return best, table


def nonzero_rates(field: RateField) -> np.ndarray:
    if not field.is_complete():
        raise IncompleteInput(f"field {field.year} has missing rates")
    return field.values[field.values > 0]


@dataclass(frozen=True)
class AnomalyLabeling:
    year: int
    hot: frozenset
    cold: frozenset
    zero: frozenset
    tail: float
    q_low: float
    q_high: float

    def label_of(self, region: str) -> str:
        for name in ("hot", "cold", "zero"):
            if region in getattr(self, name):
                return name
        return "none"

    def counts(self) -> dict:
        return {"hot": len(self.hot), "cold": len(self.cold), "zero": len(self.zero)}


def label_anomalies(field: RateField, dist: FittedDistribution, tail: float = 0.02) -> AnomalyLabeling:
    """Hot: rate above the ``1 - tail`` quantile; cold: nonzero rate below the
    ``tail`` quantile; zero: rate exactly 0. Both comparisons are strict."""
    if not 0 < tail < 0.5:
        raise ValueError("tail must lie in (0, 0.5)")
    if not field.is_complete():
        raise IncompleteInput(f"field {field.year} has missing rates")
    q_low, q_high = (float(q) for q in dist.ppf([tail, 1 - tail]))
    ids = np.array(field.regions)
    v = field.values
    return AnomalyLabeling(
        year=field.year,
        hot=frozenset(ids[v > q_high].tolist()),
        cold=frozenset(ids[(v > 0) & (v < q_low)].tolist()),
        zero=frozenset(ids[v == 0].tolist()),
        tail=float(tail),
        q_low=q_low,
        q_high=q_high,
    )


@dataclass(frozen=True)
class TailSweep:
    labelings: dict
    empty_cold: tuple = ()

    def counts(self) -> dict:
        return {t: lab.counts() for t, lab in self.labelings.items()}


def tail_sweep(field: RateField, dist: FittedDistribution, tails=(0.01, 0.02, 0.03)) -> TailSweep:
    """Label at each tail size; ``empty_cold`` lists tails that found no cold region."""
    labs = {float(t): label_anomalies(field, dist, t) for t in sorted(tails)}
    return TailSweep(labs, tuple(t for t, lab in labs.items() if not lab.cold))


DIRECTIONS = {"hot": "hot-descending", "cold": "cold-ascending", "zero": "zero-ascending"}


@dataclass(frozen=True)
class RankingReport:
    direction: str
    features: tuple
    years: tuple
    yearly_means: np.ndarray
    average: np.ndarray
    order: list
    skipped_years: tuple = field(default=())


def rank_features(labelings: Iterable[AnomalyLabeling], panel: FeaturePanel, set_kind: str) -> RankingReport:
    """Rank covariates by their mean within an anomaly set, averaged over years.

    Each year's mean is taken over that year's regions of ``set_kind``; years
    with no such region are skipped with a warning. Hot sets rank
    descending, cold and zero sets ascending.
    """
    if set_kind not in DIRECTIONS:
        raise ValueError(f"set_kind must be one of {sorted(DIRECTIONS)}")
    pos = {r: i for i, r in enumerate(panel.regions)}
    years, means, skipped = [], [], []
    for lab in sorted(labelings, key=lambda l: l.year):
        if lab.year not in panel.years:
            raise DataError(f"covariates missing for labeled year {lab.year}")
        members = sorted(getattr(lab, set_kind))
        if not members:
            skipped.append(lab.year)
            warnings.warn(f"no {set_kind} regions in {lab.year}; year skipped", stacklevel=2)
            continue
        try:
            rows = [pos[r] for r in members]
        except KeyError as exc:
            raise DataError(f"region {exc.args[0]} has no covariates") from None
        block = panel.matrix(lab.year)[rows]
        if np.isnan(block).any():
            raise IncompleteInput(f"covariates for {lab.year} contain missing values")
        years.append(lab.year)
        means.append(block.mean(axis=0))
    if not years:
        raise EmptyAnomalySet(f"no year has any {set_kind} region")
    yearly = np.vstack(means)
    avg = yearly.mean(axis=0)
    order = rank_order(panel.features, avg, descending=(set_kind == "hot"))
    return RankingReport(DIRECTIONS[set_kind], tuple(panel.features), tuple(years), yearly, avg, order, tuple(skipped))


def write_labels_csv(path, field_labelings: Iterable[tuple]) -> None:
    """``fips,year,label`` for each ``(field, labeling)`` pair."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "year", "label"])
        for fld, lab in field_labelings:
            for r in fld.regions:
                w.writerow([r, lab.year, lab.label_of(r)])
