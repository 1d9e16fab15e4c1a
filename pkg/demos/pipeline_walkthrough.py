"""
The command-line pipeline on a synthetic study
==============================================

Writes a study to a temp directory and runs every subcommand in order,
the same way a shell script would call ``geomort``.
"""
import json
import sys
import tempfile
from pathlib import Path

from geomort.cli import main
from geomort.synth import write_study

n = int(sys.argv[1]) if len(sys.argv) > 1 else 300
root = Path(tempfile.mkdtemp(prefix="geomort_demo_"))
data, out = root / "data", root / "out"
info = write_study(data, seed=0, n_regions=n)
print("study files:", sorted(p.name for p in data.iterdir()))

cells = ",".join(f"{r}:{y}" for r, y in info["unusable"])
graph = ["--adjacency", str(data / "adjacency.csv"), "--centroids", str(data / "centroids.csv")]
common = ["--output-dir", str(out)]
cov, imputed = str(out / "covariates_filled.csv"), str(out / "rates_imputed.csv")

steps = [
    # covariate releases every other year, one unusable cell bridged by its neighbors in time
    ["covariates-fill", *graph, "--covariates", str(data / "covariates_releases.csv"), "--unusable", cells],
    ["impute", *graph, "--rates", str(data / "rates_censored.csv")],
    ["crosswalk", "--rates", str(data / "rates_old_structure.csv"), "--crosswalk", str(data / "crosswalk.csv")],
    ["bench", *graph, "--rates", str(data / "rates_true.csv"), "--seeds", "0-4"],
    ["anomaly", "--rates", imputed, "--covariates", cov, "--geojson", str(data / "regions.geojson")],
    ["gbt", "--rates", imputed, "--covariates", cov, "--gbt-trees", "10,20", "--gbt-depths", "3"],
    ["ae", "--rates", imputed, "--covariates", cov, "--ae-d1", "48", "--ae-d2", "8",
     "--ae-max-epochs", "30", "--ae-n-samples", "10"],
    ["report", "--rates", imputed, "--truth", str(data / "rates_true.csv"),
     "--predictions", f"gbt={out / 'gbt_predictions.csv'},ae={out / 'ae_predictions.csv'}"],
]
for step in steps:
    code = main(step + common)
    print(f"geomort {step[0]:<16} exit {code}")

# every command leaves a manifest with its resolved settings and output files
m = json.loads((out / "manifest_bench.json").read_text())
print("bench manifest keys:", sorted(m))
print(len(list(out.iterdir())), "files written")
print("outputs in", out)
