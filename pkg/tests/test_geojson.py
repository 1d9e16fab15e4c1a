import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomort.anomaly import label_anomalies, make_distribution
from geomort.errors import FipsMismatch, MalformedRecord
from geomort.fields import RateField
from geomort.geojson import emit_geojson, empirical_percentile, read_geojson, write_geojson
from oracles import percentile_brute


def collection(ids, geometry=None):
    geom = geometry or {"type": "Point", "coordinates": [-100.0, 40.0]}
    return {"type": "FeatureCollection",
            "features": [{"type": "Feature", "properties": {"fips": r, "name": r}, "geometry": geom} for r in ids]}


def test_single_feature_gains_rate():
    f = RateField(2021, ("01001",), np.array([12.5]))
    out = emit_geojson(collection(["01001"]), f)
    props = out["features"][0]["properties"]
    assert props["rate"] == 12.5 and props["percentile"] == 100.0 and props["name"] == "01001"


def test_unmatched_feature_named():
    f = RateField(2021, ("01001",), np.array([1.0]))
    with pytest.raises(FipsMismatch) as exc:
        emit_geojson(collection(["01001", "01003"]), f)
    assert "01003" in str(exc.value)


def test_max_rate_is_100th_percentile(rng):
    v = rng.uniform(0, 50, 40)
    ids = tuple(f"{i:05d}" for i in range(1001, 1041))
    out = emit_geojson(collection(ids), RateField(2021, ids, v))
    top = max(out["features"], key=lambda ft: ft["properties"]["rate"])
    assert top["properties"]["percentile"] == 100.0


def test_geometry_untouched_and_base_not_mutated():
    poly = {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 0]]]}
    base = collection(["01001", "01003"], poly)
    snapshot = json.dumps(base, sort_keys=True)
    f = RateField(2021, ("01001", "01003"), np.array([0.0, float("nan")]))
    lab = label_anomalies(RateField(2021, ("01001", "01003"), np.array([0.0, 99.0])),
                          make_distribution("lognormal", mu=0.0, sigma=1.0))
    out = emit_geojson(base, f, lab)
    assert json.dumps(base, sort_keys=True) == snapshot
    assert out["features"][1]["geometry"] == poly
    assert out["features"][1]["properties"]["rate"] is None
    assert [ft["properties"]["anomaly"] for ft in out["features"]] == ["zero", "hot"]


def test_malformed_inputs():
    f = RateField(2021, ("01001",), np.array([1.0]))
    with pytest.raises(MalformedRecord):
        emit_geojson({"type": "Feature"}, f)
    bad = collection(["01001"])
    del bad["features"][0]["properties"]["fips"]
    with pytest.raises(MalformedRecord):
        emit_geojson(bad, f)
    with pytest.raises(ValueError):
        emit_geojson(collection(["01001"]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6).map(float), min_size=1, max_size=30))
def test_percentile_matches_brute_force(vals):
    assert empirical_percentile(vals).tolist() == pytest.approx(percentile_brute(vals), abs=1e-12)


def test_percentile_ties_and_nan():
    assert empirical_percentile([1, 1, 2]).tolist() == [25.0, 25.0, 100.0]
    p = empirical_percentile([3.0, float("nan"), 1.0])
    assert p[0] == 100 and np.isnan(p[1]) and p[2] == 0


def test_file_round_trip(tmp_path):
    c = collection(["01001"])
    write_geojson(tmp_path / "a.geojson", c)
    assert read_geojson(tmp_path / "a.geojson") == c
