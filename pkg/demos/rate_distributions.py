"""
Which distribution fits the rates, and who sits in the tails
============================================================
"""
import numpy as np

from geomort.anomaly import fit_mle, label_anomalies, select_best, tail_sweep
from geomort.fields import RateField

rng = np.random.default_rng(7)
n = 3000
rates = rng.lognormal(2.3, 0.6, n)
rates[rng.random(n) < 0.15] = 0.0      # small regions often report no deaths
field = RateField(2019, tuple(f"{1001 + i:05d}" for i in range(n)), np.round(rates, 2))

# zeros are labelled separately; the fit only sees positive rates
positive = field.values[field.values > 0]
best, table = select_best(positive)
for row in table:
    print(f"{row.family:<18} AIC {row.aic:12.1f}  BIC {row.bic:12.1f}  KS {row.ks:.4f}")
print("best:", best.family, {k: round(v, 4) for k, v in best.params.items()})

# the lognormal MLE is just the mean and (population) std of the logs
lx = np.log(positive)
print("closed form:", round(lx.mean(), 4), round(lx.std(), 4))

sweep = tail_sweep(field, best)
for t, lab in sweep.labelings.items():
    c = lab.counts()
    print(f"tail {t:.0%}: hot {c['hot']:4d}  cold {c['cold']:4d}  zero {c['zero']:4d}")

lab = label_anomalies(field, fit_mle(positive, "gamma"), 0.02)
print("under a gamma fit instead:", lab.counts())
