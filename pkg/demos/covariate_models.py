"""
Explaining rates with covariates: boosted trees and an autoencoder
==================================================================

A small synthetic study (400 regions, 13 covariate percentiles per region).
"""
import numpy as np

from geomort.autoenc import TrainConfig, YearPair, attribution_report, predict, train
from geomort.gbt import GbtParams, cv_predict, gain_importance
from geomort.synth import synthetic_study

study = synthetic_study(seed=1, n_regions=400)
rates, cov = study["rates"], study["covariates"]
years = [y for y in rates.years if y <= 2020]

# -- boosted trees: out-of-fold predictions and gain importance per year
ens = {}
for year in years[-3:]:
    X, y = cov.matrix(year), rates[year].values
    cv = cv_predict(X, y, folds=5, grid=[GbtParams(20, 3, 10), GbtParams(40, 3, 10)], seed=0)
    print(year, "chosen", cv.params, "oof MAE", round(float(np.abs(cv.predictions - y).mean()), 3))
    ens[year] = cv.ensembles
imp = gain_importance(ens)
print("top features by gain:", imp.order[:4])

# -- autoencoder: covariates of year t predict rates of year t+1
pairs = [YearPair(y, cov.matrix(y) / 100.0, rates[y + 1].values) for y in years[:-1]]
cfg = TrainConfig(max_epochs=60, patience=10, d1=64, d2=8, seed=0)
res = train(pairs, cfg)
print(f"best epoch {res.best_epoch}, val L1 {res.log[res.best_epoch - 1].val_l1:.3f}")

last = pairs[-1]
print("test-year L1:", round(float(np.abs(predict(res.params, last.X) - last.Y).mean()), 3))

# expected gradients against the other years' covariates as baselines
base = [p.X for p in pairs[:-1]]
rep = attribution_report(res.params, {last.year: last.X}, base, n_samples=40)
print("top features by |attribution|:", rep.order[:4])
