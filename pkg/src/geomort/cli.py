"""Batch command line: ``python -m geomort <command> [--config FILE] [--key value ...]``.

Settings come from a ``key = value`` file, then the ``GEOMORT_OUTPUT_DIR``
environment variable (output directory only), then flags; later sources win.
Every command writes ``manifest_<command>.json`` next to its outputs with the
resolved settings, their hash, input and output checksums and the toolkit
version, and nothing time-dependent, so identical runs give identical bytes.

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, EmptyAnomalySet, GeomortError, NumericalError
from .fields import RateField, RatePanel, read_covariates_csv, read_rates_csv, write_covariates_csv, write_rates_csv
from .geo import attach_island_neighbors, read_graph
from .reports import fmt6, write_summary_csv, write_yearly_csv

ENV_OUTPUT_DIR = "GEOMORT_OUTPUT_DIR"
COMMANDS = ("impute", "bench", "crosswalk", "covariates-fill", "anomaly", "gbt", "ae", "report")


def _int_list(s: str) -> tuple:
    out = []
    for part in s.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _float_list(s: str) -> tuple:
    return tuple(float(p) for p in s.split(",") if p.strip())


def _str_list(s: str) -> tuple:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("none", "") else int(s)


def _cells(s: str) -> tuple:
    """``fips:year`` pairs separated by commas."""
    out = []
    for part in _str_list(s):
        fips, year = part.split(":")
        out.append((fips.strip(), int(year)))
    return tuple(out)


def _named_paths(s: str) -> tuple:
    """``name=path`` pairs separated by commas."""
    out = []
    for part in _str_list(s):
        name, path = part.split("=", 1)
        out.append((name.strip(), path.strip()))
    return tuple(out)


# key: (parser, default, help)
SCHEMA = {
    "rates": (str, "", "rates CSV (fips,year,rate)"),
    "truth": (str, "", "complete rates CSV used as truth by report (default: rates)"),
    "covariates": (str, "", "covariate CSV (fips,year,<13 features>)"),
    "adjacency": (str, "", "adjacency CSV (fips,neighbor_fips)"),
    "centroids": (str, "", "centroid CSV (fips,lat,lon)"),
    "crosswalk": (str, "", "crosswalk CSV (source_fips,target_fips,weight)"),
    "geojson": (str, "", "base GeoJSON FeatureCollection with a fips property"),
    "geojson_year": (_opt_int, None, "year drawn into GeoJSON output (default: last year)"),
    "predictions": (_named_paths, (), "report inputs as name=path,name=path"),
    "output_dir": (str, "geomort_out", "directory for outputs"),
    "year_start": (int, 2010, "first year"),
    "year_end": (int, 2022, "last year"),
    "method": (str, "neighbor_mean", "imputer for the impute command"),
    "methods": (_str_list, ("national_mean", "state_mean", "idw", "neighbor_mean"), "imputers to benchmark"),
    "fraction": (float, 0.5, "censoring probability per region"),
    "seeds": (_int_list, tuple(range(20)), "censoring seeds, e.g. 0-19"),
    "write_masks": (_bool, False, "also write the censoring masks"),
    "idw_power": (float, 1.0, "IDW distance exponent"),
    "idw_max_donors": (_opt_int, 8, "IDW nearest-donor cap (none = all)"),
    "island_k": (int, 5, "mainland regions attached to each island"),
    "passthrough": (_bool, True, "crosswalk: copy regions not in the crosswalk"),
    "observed_years": (_int_list, (), "covariate release years (default: years in the file)"),
    "unusable": (_cells, (), "covariate cells to discard, fips:year,..."),
    "tail": (float, 0.02, "anomaly tail probability"),
    "tails": (_float_list, (0.01, 0.02, 0.03), "tail sizes for the sweep"),
    "gbt_trees": (_int_list, (50, 100, 200), "grid: tree counts"),
    "gbt_depths": (_int_list, (3, 4, 6), "grid: max depths"),
    "gbt_min_leaf": (_int_list, (5, 20), "grid: min samples per leaf"),
    "gbt_learning_rate": (float, 0.1, "boosting learning rate"),
    "gbt_folds": (int, 5, "cross-validation folds"),
    "gbt_seed": (int, 0, "fold assignment seed"),
    "ae_d1": (int, 1024, "first hidden width"),
    "ae_d2": (int, 128, "bottleneck width"),
    "ae_max_epochs": (int, 100, "epoch cap"),
    "ae_patience": (int, 10, "early-stopping patience"),
    "ae_lr_base": (float, 1e-4, "cyclical step size floor"),
    "ae_lr_peak": (float, 1e-2, "cyclical step size peak"),
    "ae_lr_cycle": (int, 10, "epochs per step-size cycle"),
    "ae_optimizer": (str, "adam", "adam or sgd"),
    "ae_output_bias": (str, "median", "median or init"),
    "ae_seed": (int, 0, "initialization seed"),
    "ae_validation_year": (int, 2015, "target year held out for validation"),
    "ae_test_year": (int, 2022, "target year held out for testing"),
    "ae_n_samples": (int, 200, "expected-gradients draws"),
    "ae_shap_seed": (int, 0, "expected-gradients seed"),
}

# data inputs each command needs
REQUIRED = {
    "impute": ("rates", "adjacency", "centroids"),
    "bench": ("rates", "adjacency", "centroids"),
    "crosswalk": ("rates", "crosswalk"),
    "covariates-fill": ("covariates", "adjacency", "centroids"),
    "anomaly": ("rates",),
    "gbt": ("rates", "covariates"),
    "ae": ("rates", "covariates"),
    "report": ("rates", "predictions"),
}
PATH_KEYS = ("rates", "truth", "covariates", "adjacency", "centroids", "crosswalk", "geojson")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{message}\n{self.format_usage().rstrip()}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    for key, (_, default, text) in SCHEMA.items():
        common.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="V",
                            help=f"{text} [default: {default!r}]")
    parser = _Parser(prog="geomort", description="Rate imputation, anomaly analysis and covariate models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=(COMMAND_HELP[name]))
    return parser


COMMAND_HELP = {
    "impute": "fill missing rates",
    "bench": "censor complete rates and score every imputer",
    "crosswalk": "re-express rates on new region boundaries",
    "covariates-fill": "interpolate covariates between releases and fill gaps",
    "anomaly": "fit rate distributions, label hot/cold/zero regions, rank covariates",
    "gbt": "boosted-tree out-of-fold predictions and gain importance",
    "ae": "train the autoencoder, predict, and attribute",
    "report": "prediction efficacy and rate summary statistics",
}


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    raw = read_config_file(args.config) if args.config else {}
    if args.config:
        # relative paths in a config file are relative to that file
        base = Path(args.config).resolve().parent
        for key in PATH_KEYS + ("output_dir",):
            if raw.get(key) and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
        if raw.get("predictions"):
            raw["predictions"] = ",".join(
                f"{n}={p if Path(p).is_absolute() else base / p}" for n, p in _named_paths(raw["predictions"]))
    env_dir = os.environ.get(ENV_OUTPUT_DIR)
    if env_dir:
        raw["output_dir"] = env_dir
    for key in SCHEMA:
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    cfg = {}
    for key, (parse, default, _) in SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = parse(raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from None
        else:
            cfg[key] = default
    _validate(cfg, args.command)
    return cfg


def _validate(cfg: dict, command: str):
    if not 2010 <= cfg["year_start"] <= cfg["year_end"] <= 2022:
        raise ConfigError("year range must satisfy 2010 <= year_start <= year_end <= 2022")
    if not 0 < cfg["tail"] < 0.5:
        raise ConfigError("tail must lie in (0, 0.5)")
    if any(not 0 < t < 0.5 for t in cfg["tails"]):
        raise ConfigError("every sweep tail must lie in (0, 0.5)")
    if not 0 <= cfg["fraction"] <= 1:
        raise ConfigError("fraction must lie in [0, 1]")
    if not cfg["seeds"]:
        raise ConfigError("seeds is empty")
    missing = [k for k in REQUIRED[command] if not cfg[k]]
    if missing:
        raise ConfigError(f"{command} needs settings: {', '.join(missing)}")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Collects outputs and notes for one command and writes its manifest."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["output_dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.notes = {}
        self.seeds = {}

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_manifest(self):
        inputs = {}
        for key in PATH_KEYS:
            if self.cfg[key] and Path(self.cfg[key]).is_file():
                inputs[key] = _sha256(self.cfg[key])
        for name, p in self.cfg["predictions"]:
            if Path(p).is_file():
                inputs[f"predictions:{name}"] = _sha256(p)
        # where outputs land does not change them, so it stays out of the record
        cfg = {k: v for k, v in self.cfg.items() if k != "output_dir"}
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": _jsonable(cfg),
            "config_hash": config_hash(cfg),
            "seeds": _jsonable(self.seeds),
            "inputs": inputs,
            "outputs": {n: _sha256(self.out / n) for n in sorted(set(self.outputs))},
            "notes": _jsonable(self.notes),
        }
        with open(self.out / f"manifest_{self.command}.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")


# ---- shared loading -------------------------------------------------------

def _graph(cfg):
    return attach_island_neighbors(read_graph(cfg["adjacency"], cfg["centroids"]), cfg["island_k"])


def _in_range(cfg, years):
    return [y for y in years if cfg["year_start"] <= y <= cfg["year_end"]]


def _rates(cfg, key="rates") -> RatePanel:
    panel = read_rates_csv(cfg[key])
    years = _in_range(cfg, panel.years)
    if not years:
        raise DataError(f"{cfg[key]} has no years in {cfg['year_start']}-{cfg['year_end']}")
    return RatePanel(panel[y] for y in years)


def _model_pairs(cfg):
    """(input year t, X_t scaled, regions, targets t+1) over the configured range."""
    rates = _rates(cfg)
    cov = read_covariates_csv(cfg["covariates"])
    regions = rates[rates.years[0]].regions
    cov = cov.aligned_to(regions)
    pairs = []
    for t in _in_range(cfg, cov.years):
        if t + 1 not in rates.years:
            continue
        X = cov.matrix(t)
        y = rates[t + 1].aligned_to(regions)
        if np.isnan(X).any() or np.isnan(y).any():
            raise DataError(f"models need complete inputs; year {t} covariates or {t + 1} rates have gaps")
        pairs.append((t, X, y))
    if not pairs:
        raise DataError("no (covariate year, next-year rate) pairs in range")
    return regions, pairs


def _as_rates(year, regions, pred, clipped: dict) -> RateField:
    # models are unconstrained; a rate field cannot hold negative values
    neg = pred < 0
    if neg.any():
        clipped[year] = int(neg.sum())
    return RateField(year, regions, np.where(neg, 0.0, pred))


# ---- commands -------------------------------------------------------------

def cmd_impute(run: Run):
    from .imputation import IMPUTERS

    cfg = run.cfg
    if cfg["method"] not in IMPUTERS:
        raise ConfigError(f"unknown method {cfg['method']!r}; choose from {sorted(IMPUTERS)}")
    graph = _graph(cfg)
    kw = {"power": cfg["idw_power"], "max_donors": cfg["idw_max_donors"]} if cfg["method"] == "idw" else {}
    out, counts = [], {}
    for field in _rates(cfg):
        field = RateField(field.year, graph.regions, field.aligned_to(graph.regions))
        counts[field.year] = field.n_missing
        out.append(IMPUTERS[cfg["method"]](field, graph, **kw))
    write_rates_csv(run.path("rates_imputed.csv"), out)
    run.notes["imputed_per_year"] = counts
    run.notes["imputed_total"] = sum(counts.values())


def cmd_bench(run: Run):
    from .benchmark import censor, compare_methods, write_benchmark_csv, write_mask

    cfg = run.cfg
    graph = _graph(cfg)
    truth = RatePanel(RateField(f.year, graph.regions, f.aligned_to(graph.regions)) for f in _rates(cfg))
    rows = compare_methods(truth, graph, cfg["fraction"], cfg["seeds"], cfg["methods"],
                           {"power": cfg["idw_power"], "max_donors": cfg["idw_max_donors"]})
    write_benchmark_csv(run.path("benchmark.csv"), rows)
    if cfg["write_masks"]:
        for field in truth:
            for seed in cfg["seeds"]:
                write_mask(run.path(f"masks/mask_{field.year}_{seed}.csv"), censor(field, cfg["fraction"], seed)[1])
    run.seeds["censor"] = list(cfg["seeds"])


def cmd_crosswalk(run: Run):
    from .temporal import apply_crosswalk, read_crosswalk_csv

    cfg = run.cfg
    cw = read_crosswalk_csv(cfg["crosswalk"])
    out = [apply_crosswalk(f, cw, passthrough=cfg["passthrough"]) for f in _rates(cfg)]
    write_rates_csv(run.path("rates_crosswalked.csv"), out)
    run.notes["targets"] = len(cw.target_ids)


def cmd_covariates_fill(run: Run):
    from .temporal import impute_feature_gaps, linear_gap_fill

    cfg = run.cfg
    graph = _graph(cfg)
    panel = read_covariates_csv(cfg["covariates"])
    observed = cfg["observed_years"] or panel.years
    years = list(range(cfg["year_start"], cfg["year_end"] + 1))
    n_missing = int(np.isnan(panel.values).sum())
    filled = linear_gap_fill(panel, observed, cfg["unusable"], years)
    gaps = int(np.isnan(filled.values).sum())
    filled = impute_feature_gaps(filled, graph)
    write_covariates_csv(run.path("covariates_filled.csv"), filled)
    run.notes.update(observed_years=list(observed), missing_input_cells=n_missing,
                     neighbor_filled_cells=gaps, unusable=[list(c) for c in cfg["unusable"]])


def cmd_anomaly(run: Run):
    import warnings

    from .anomaly import label_anomalies, nonzero_rates, rank_features, select_best, tail_sweep, write_labels_csv

    cfg = run.cfg
    rates = _rates(cfg)
    fits, labelings, sweeps = [], [], []
    for field in rates:
        best, table = select_best(nonzero_rates(field))
        fits.append((field.year, best, table))
        labelings.append((field, label_anomalies(field, best, cfg["tail"])))
        sweeps.append((field.year, tail_sweep(field, best, cfg["tails"])))

    with open(run.path("fits.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "family", "ok", "aic", "bic", "ks", "aic_rank", "bic_rank", "ks_rank", "selected", "params"])
        for year, best, table in fits:
            for d in table:
                params = json.dumps({k: float(fmt6(v)) for k, v in best.params.items()}, sort_keys=True) \
                    if d.family == best.family else ""
                w.writerow([year, d.family, int(d.ok), fmt6(d.aic), fmt6(d.bic), fmt6(d.ks),
                            d.aic_rank or "", d.bic_rank or "", d.ks_rank or "", int(d.family == best.family), params])
    write_labels_csv(run.path("labels.csv"), labelings)
    with open(run.path("tail_sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "tail", "hot", "cold", "zero"])
        for year, sw in sweeps:
            for t, c in sw.counts().items():
                w.writerow([year, fmt6(t), c["hot"], c["cold"], c["zero"]])
    run.notes["empty_cold_tails"] = {y: list(sw.empty_cold) for y, sw in sweeps if sw.empty_cold}

    if cfg["covariates"]:
        cov = read_covariates_csv(cfg["covariates"])
        labs = [lab for _, lab in labelings]
        for kind in ("hot", "cold", "zero"):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    rep = rank_features(labs, cov, kind)
            except EmptyAnomalySet as exc:
                run.notes[f"ranking_{kind}"] = f"skipped: {exc}"
                continue
            write_yearly_csv(run.path(f"ranking_{kind}_yearly.csv"), rep.features, rep.years, rep.yearly_means, "mean")
            write_summary_csv(run.path(f"ranking_{kind}_summary.csv"), rep.features, rep.average, rep.order)
            if rep.skipped_years:
                run.notes[f"ranking_{kind}_skipped_years"] = list(rep.skipped_years)

    if cfg["geojson"]:
        _write_geojson(run, rates, dict((lab.year, lab) for _, lab in labelings), "anomaly")


def _write_geojson(run: Run, rates: RatePanel, labelings: dict | None, stem: str):
    from .geojson import emit_geojson, read_geojson, write_geojson

    year = run.cfg["geojson_year"] or rates.years[-1]
    if year not in rates.years:
        raise ConfigError(f"geojson_year {year} is not among the rate years")
    out = emit_geojson(read_geojson(run.cfg["geojson"]), rates[year], (labelings or {}).get(year))
    write_geojson(run.path(f"{stem}_{year}.geojson"), out)


def cmd_gbt(run: Run):
    from .gbt import GbtParams, cv_predict, gain_importance, write_model_json

    cfg = run.cfg
    regions, pairs = _model_pairs(cfg)
    grid = [GbtParams(t, d, m, cfg["gbt_learning_rate"])
            for t in cfg["gbt_trees"] for d in cfg["gbt_depths"] for m in cfg["gbt_min_leaf"]]
    if not grid:
        raise ConfigError("empty hyperparameter grid")
    preds, ensembles, chosen = [], {}, []
    models, clipped = {}, {}
    for t, X, y in pairs:
        res = cv_predict(X, y, cfg["gbt_folds"], grid, cfg["gbt_seed"])
        preds.append(_as_rates(t + 1, regions, res.predictions, clipped))
        ensembles[t + 1] = res.ensembles
        chosen.append((t + 1, res.params, dict((p, s) for p, s in res.grid_scores)[res.params]))
        models[str(t + 1)] = res.ensembles[0].to_dict()
    write_rates_csv(run.path("gbt_predictions.csv"), preds)
    with open(run.path("gbt_cv.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "n_trees", "max_depth", "min_leaf", "learning_rate", "cv_mae"])
        for year, p, score in chosen:
            w.writerow([year, p.n_trees, p.max_depth, p.min_leaf, fmt6(p.learning_rate), fmt6(score)])
    rep = gain_importance(ensembles)
    write_yearly_csv(run.path("gbt_importance_yearly.csv"), rep.features, rep.years, rep.yearly, "score")
    write_summary_csv(run.path("gbt_importance_summary.csv"), rep.features, rep.average, rep.order)
    with open(run.path("gbt_models_fold0.json"), "w") as fh:
        json.dump(models, fh, sort_keys=True)
        fh.write("\n")
    run.seeds["folds"] = cfg["gbt_seed"]
    run.notes["negative_predictions_clipped"] = clipped


def cmd_ae(run: Run):
    from .autoenc import (TrainConfig, YearPair, attribution_report, predict, save_params, train,
                          write_attribution, write_training_log)

    cfg = run.cfg
    regions, pairs = _model_pairs(cfg)
    ypairs = [YearPair(t, X / 100.0, y) for t, X, y in pairs]
    try:
        tc = TrainConfig(
            max_epochs=cfg["ae_max_epochs"], patience=cfg["ae_patience"], lr_base=cfg["ae_lr_base"],
            lr_peak=cfg["ae_lr_peak"], lr_cycle=cfg["ae_lr_cycle"], seed=cfg["ae_seed"],
            validation_year=cfg["ae_validation_year"], d1=cfg["ae_d1"], d2=cfg["ae_d2"],
            output_bias=cfg["ae_output_bias"], optimizer=cfg["ae_optimizer"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 < tc.d2 < tc.d1 < len(regions):
        raise ConfigError(f"need 0 < ae_d2 < ae_d1 < {len(regions)} regions")
    fit = [p for p in ypairs if p.target_year < cfg["ae_test_year"]]
    result = train(fit, tc)
    params = result.params
    write_training_log(run.path("ae_training_log.csv"), result.log)
    save_params(run.path("ae_params.bin"), params)
    clipped = {}
    preds = [_as_rates(p.target_year, regions, predict(params, p.X), clipped) for p in ypairs]
    run.notes["negative_predictions_clipped"] = clipped
    write_rates_csv(run.path("ae_predictions.csv"), preds)
    baselines = [p.X for p in fit if p.target_year != tc.validation_year]
    rep = attribution_report(params, {p.target_year: p.X for p in ypairs}, baselines,
                             cfg["ae_n_samples"], cfg["ae_shap_seed"])
    write_attribution(str(run.path("ae_shap_yearly.csv"))[:-len("_yearly.csv")], rep)
    run.outputs.append("ae_shap_summary.csv")
    run.seeds.update(init=cfg["ae_seed"], shap=cfg["ae_shap_seed"])
    run.notes.update(best_epoch=result.best_epoch, epochs_run=len(result.log), stopped_early=result.stopped_early)


def cmd_report(run: Run):
    from .benchmark import efficacy_report, summary_stats

    cfg = run.cfg
    truth = _rates(cfg, "truth" if cfg["truth"] else "rates")
    summary, per_region = [], []
    for name, path in cfg["predictions"]:
        pred = read_rates_csv(path)
        for year in _in_range(cfg, pred.years):
            if year not in truth.years:
                continue
            t = truth[year]
            p = RateField(year, t.regions, pred[year].aligned_to(t.regions))
            rep = efficacy_report(p, t)
            summary.append([name, year, fmt6(rep.avg_error), fmt6(rep.max_error), fmt6(rep.avg_accuracy)])
            per_region.extend([name, year, r, fmt6(e), fmt6(a)] for r, e, a in zip(rep.regions, rep.error, rep.accuracy))
    if not summary:
        raise DataError("no prediction year overlaps the truth years")
    with open(run.path("efficacy_summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "year", "avg_error", "max_error", "avg_accuracy"])
        w.writerows(summary)
    with open(run.path("efficacy_regions.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "year", "fips", "error", "accuracy"])
        w.writerows(per_region)
    with open(run.path("summary_stats.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "mean", "std", "min", "q1", "median", "q3", "max"])
        for field in truth:
            s = summary_stats(field)
            w.writerow([field.year] + [fmt6(v) for v in (s.mean, s.std, s.min, s.q1, s.median, s.q3, s.max)])
    if cfg["geojson"]:
        _write_geojson(run, truth, None, "rates")


HANDLERS = {
    "impute": cmd_impute,
    "bench": cmd_bench,
    "crosswalk": cmd_crosswalk,
    "covariates-fill": cmd_covariates_fill,
    "anomaly": cmd_anomaly,
    "gbt": cmd_gbt,
    "ae": cmd_ae,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError(f"a command is required\n{parser.format_usage().rstrip()}")
        cfg = resolve_config(args)
        run = Run(args.command, cfg)
        HANDLERS[args.command](run)
        run.write_manifest()
    except ConfigError as exc:
        print(f"geomort: configuration error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, ValueError) as exc:
        print(f"geomort: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"geomort: numerical failure: {exc}", file=sys.stderr)
        return 3
    except GeomortError as exc:
        print(f"geomort: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
