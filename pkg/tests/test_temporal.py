import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomort.errors import MissingSource, UnbracketedGap, ZeroWeightTarget
from geomort.fields import FEATURES, FeaturePanel, RateField
from geomort.geo import load_graph
from geomort.imputation import neighbor_mean_impute
from geomort.temporal import (
    Crosswalk,
    apply_crosswalk,
    impute_feature_gaps,
    linear_gap_fill,
    read_crosswalk_csv,
)

NF = len(FEATURES)


def panel_from(years, per_year, regions=("01001",)):
    """``per_year[k]`` is a scalar broadcast over regions and features, or a full array."""
    vals = np.empty((len(years), len(regions), NF))
    for k, v in enumerate(per_year):
        vals[k] = v
    return FeaturePanel(tuple(years), tuple(regions), vals)


def test_quarter_steps():
    out = linear_gap_fill(panel_from([2010, 2014], [0, 4]), [2010, 2014])
    assert out.years == (2010, 2011, 2012, 2013, 2014)
    assert out.values[:, 0, 0].tolist() == [0, 1, 2, 3, 4]


def test_half_step():
    out = linear_gap_fill(panel_from([2014, 2016], [10, 14]), [2014, 2016])
    assert out.column(2015, "unemployment").tolist() == [12]


def test_unusable_release_bridged():
    regions = ("35039", "35041")
    p = panel_from([2016, 2018, 2020], [8, 99, 16], regions)
    out = linear_gap_fill(p, [2016, 2018, 2020], unusable=[("35039", 2018)])
    assert out.values[:, 0, 0].tolist() == [8, 10, 12, 14, 16]
    # the other region keeps its 2018 observation
    assert out.values[:, 1, 0].tolist() == [8, 53.5, 99, 57.5, 16]


def test_unbracketed():
    with pytest.raises(UnbracketedGap):
        linear_gap_fill(panel_from([2014, 2016], [1, 2]), [2014, 2016], years=range(2013, 2017))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=5), st.lists(st.integers(1, 4), min_size=4, max_size=4))
def test_exact_at_observations_and_bounded(vals, gaps):
    years = [2010]
    for g in gaps[:len(vals) - 1]:
        years.append(years[-1] + g)
    vals = vals[:len(years)]
    out = linear_gap_fill(panel_from(years, vals), years)
    for y, v in zip(years, vals):
        assert out.column(y, "crowding")[0] == v
    for a, b, va, vb in zip(years, years[1:], vals, vals[1:]):
        for y in range(a, b + 1):
            x = out.column(y, "crowding")[0]
            assert min(va, vb) - 1e-9 <= x <= max(va, vb) + 1e-9


def _grid6():
    ids = [f"01{i:03d}" for i in range(1, 7)]
    pos = {r: (i // 3, i % 3) for i, r in enumerate(ids)}
    edges = [(a, b) for a in ids for b in ids if a < b
             and max(abs(pos[a][0] - pos[b][0]), abs(pos[a][1] - pos[b][1])) == 1]
    return load_graph(edges, [(r, pos[r][0], pos[r][1]) for r in ids]), ids


def test_feature_gap_one_missing():
    g = load_graph([("01001", "01002"), ("01002", "01003")], [("01001", 0, 0), ("01002", 0, 1), ("01003", 0, 2)])
    vals = np.array([[[40.0] * NF, [np.nan] * NF, [60.0] * NF]])
    out = impute_feature_gaps(FeaturePanel((2014,), g.regions, vals), g)
    assert np.all(out.values[0, 1] == 50)


def test_feature_gaps_match_rate_imputer(rng):
    g, ids = _grid6()
    vals = rng.uniform(0, 100, (2, 6, NF))
    vals[0, [1, 4], :] = np.nan
    vals[1, 2, 3] = np.nan
    panel = FeaturePanel((2014, 2015), g.regions, vals)
    out = impute_feature_gaps(panel, g)
    for yi, y in enumerate(panel.years):
        for j in range(NF):
            want = neighbor_mean_impute(RateField(y, g.regions, vals[yi, :, j]), g).values
            assert np.array_equal(out.values[yi, :, j], want)
    full = impute_feature_gaps(out, g)
    assert np.array_equal(full.values, out.values)


def rf(d, year=2014):
    return RateField.from_mapping(year, d)


def test_crosswalk_examples():
    cw = Crosswalk.from_entries([("09001", "09110", 0.5), ("09003", "09110", 0.5)])
    assert apply_crosswalk(rf({"09001": 10, "09003": 30}), cw)["09110"] == 20
    cw = Crosswalk.from_entries([("09001", "09120", 2.0)])
    assert apply_crosswalk(rf({"09001": 13.5}), cw)["09120"] == 13.5
    cw = Crosswalk.from_entries([("09001", "09130", 1.0), ("09003", "09130", 3.0)])
    assert apply_crosswalk(rf({"09001": 0, "09003": 8}), cw)["09130"] == 6


def test_crosswalk_errors():
    with pytest.raises(ZeroWeightTarget):
        Crosswalk.from_entries([("09001", "09110", 0.0)])
    cw = Crosswalk.from_entries([("09001", "09110", 1.0), ("09005", "09110", 1.0)])
    with pytest.raises(MissingSource):
        apply_crosswalk(rf({"09001": 1}), cw)


def test_passthrough():
    cw = Crosswalk.from_entries([("09001", "09110", 1.0)])
    f = rf({"09001": 4, "01001": 7})
    assert apply_crosswalk(f, cw).regions == ("09110",)
    assert apply_crosswalk(f, cw, passthrough=True).as_dict() == {"01001": 7, "09110": 4}


def test_identity_crosswalk(rng):
    f = RateField(2014, tuple(f"{i:05d}" for i in range(1001, 1101)), rng.uniform(0, 80, 100))
    assert apply_crosswalk(f, Crosswalk.identity(f.regions)).same_as(f)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_convexity(seed):
    rng = np.random.default_rng(seed)
    n_src, n_tgt = rng.integers(1, 12), rng.integers(1, 8)
    src = [f"09{i:03d}" for i in range(1, n_src + 1)]
    tgt = [f"09{i:03d}" for i in range(101, 101 + n_tgt)]
    vals = dict(zip(src, rng.uniform(0, 200, n_src)))
    entries = [(s, t, float(rng.uniform(0, 5))) for t in tgt for s in rng.choice(src, rng.integers(1, n_src + 1), replace=False)]
    cw = Crosswalk.from_entries(entries)
    out = apply_crosswalk(rf(vals), cw)
    for t in tgt:
        contrib = [vals[s] for s, tt, w in entries if tt == t and w > 0]
        assert min(contrib) <= out[t] <= max(contrib)


def test_crosswalk_csv(tmp_path):
    (tmp_path / "cw.csv").write_text("source_fips,target_fips,weight\n9001,9110,0.25\n9003,9110,0.75\n")
    cw = read_crosswalk_csv(tmp_path / "cw.csv")
    assert cw.sources == ("09001", "09003") and cw.target_ids == ("09110",)
