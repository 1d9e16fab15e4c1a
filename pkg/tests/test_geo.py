import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomort.errors import InsufficientMainland, MalformedRecord, MissingCentroid
from geomort.geo import (
    EARTH_RADIUS_KM,
    attach_island_neighbors,
    geodesic_distance,
    load_graph,
    parse_region_id,
    read_graph,
    write_graph,
)
from geomort.synth import lattice_graph
from oracles import chord_distance_km


def test_edges_are_symmetrized():
    g = load_graph([("01001", "01003")], [("01001", 32.5, -86.6), ("01003", 30.7, -87.7)])
    assert g.neighbors["01001"] == {"01003"}
    assert g.neighbors["01003"] == {"01001"}


def test_lone_centroid_is_an_island():
    g = load_graph([], [("02013", 55.0, -160.0)])
    assert g.regions == ("02013",)
    assert g.islands == ("02013",)
    assert g.neighbors["02013"] == frozenset()


def test_self_loop_rejected():
    with pytest.raises(MalformedRecord):
        load_graph([("01001", "01001")], [("01001", 32.5, -86.6)])


def test_edge_without_centroid():
    with pytest.raises(MissingCentroid):
        load_graph([("01001", "01003")], [("01001", 32.5, -86.6)])


@pytest.mark.parametrize("bad", ["1001", "010011", "0100a", "", None])
def test_bad_region_ids(bad):
    with pytest.raises(MalformedRecord):
        parse_region_id(bad)


@pytest.mark.parametrize("lat,lon", [(91, 0), (-90.5, 0), (0, 181), ("x", 0)])
def test_bad_coordinates(lat, lon):
    with pytest.raises(MalformedRecord):
        load_graph([], [("01001", lat, lon)])


def test_duplicate_edges_accepted():
    cents = [("01001", 0, 0), ("01003", 0, 1)]
    g1 = load_graph([("01001", "01003")], cents)
    g2 = load_graph([("01001", "01003"), ("01003", "01001")], cents)
    assert g1 == g2


def test_distance_examples():
    assert geodesic_distance((0, 0), (0, 0)) == 0.0
    assert geodesic_distance((0, 0), (0, 180)) == pytest.approx(math.pi * 6371.0088, rel=1e-12)
    assert geodesic_distance((0, 0), (0, 180)) == pytest.approx(20015.1, abs=0.05)
    assert geodesic_distance((36.0, -84.0), (35.0, -84.0)) == pytest.approx(111.195, abs=5e-4)
    assert EARTH_RADIUS_KM == 6371.0088


coords = st.tuples(st.floats(-90, 90), st.floats(-180, 180))


@settings(max_examples=300, deadline=None)
@given(coords, coords, coords)
def test_distance_metric_properties(a, b, c):
    ab, ba = geodesic_distance(a, b), geodesic_distance(b, a)
    assert ab >= 0
    assert abs(ab - ba) <= 1e-9
    assert geodesic_distance(a, c) <= ab + geodesic_distance(b, c) + 1e-6


@settings(max_examples=200, deadline=None)
@given(coords, coords)
def test_distance_matches_chord_formula(a, b):
    assert geodesic_distance(a, b) == pytest.approx(chord_distance_km(a, b), rel=1e-9, abs=1e-6)


def _island_graph():
    cents = [("01001", 0.0, 0.0), ("01002", 0.0, 1.0), ("01003", 1.0, 0.0), ("01004", 1.0, 1.0),
             ("01005", 2.0, 0.0), ("15001", -3.0, 0.5)]
    edges = [("01001", "01002"), ("01001", "01003"), ("01002", "01004"), ("01003", "01004"),
             ("01003", "01005"), ("01004", "01005")]
    return load_graph(edges, cents)


def test_island_takes_all_five_mainland():
    g = attach_island_neighbors(_island_graph(), 5)
    assert g.constructed["15001"] == {"01001", "01002", "01003", "01004", "01005"}
    assert g.neighborhood("15001") == g.constructed["15001"]
    assert g.neighborhood("01001") == g.neighbors["01001"]


def test_island_tie_breaks_by_id():
    # 01001 and 01002 are equidistant from the island
    cents = [("01002", 0.0, 1.0), ("01001", 0.0, -1.0), ("15001", -2.0, 0.0)]
    g = attach_island_neighbors(load_graph([("01001", "01002")], cents), 1)
    assert g.constructed["15001"] == {"01001"}


def test_no_islands_is_identity():
    g, _ = lattice_graph(3, 3)
    assert attach_island_neighbors(g) is g


def test_insufficient_mainland():
    with pytest.raises(InsufficientMainland):
        attach_island_neighbors(_island_graph(), 6)


def test_attach_is_idempotent():
    g = attach_island_neighbors(_island_graph(), 3)
    assert attach_island_neighbors(g, 3) == g


def test_csv_round_trip(tmp_path):
    g, _ = lattice_graph(4, 5, n_islands=2)
    write_graph(g, tmp_path / "adj.csv", tmp_path / "cent.csv")
    assert read_graph(tmp_path / "adj.csv", tmp_path / "cent.csv") == g


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2))
def test_records_round_trip(nr, nc, isl):
    g, _ = lattice_graph(nr, nc, n_islands=isl)
    assert load_graph(*g.records()) == g


def test_invariants_on_lattice():
    g, _ = attach_island_neighbors(lattice_graph(6, 7, n_islands=2)[0]), None
    for r in g.regions:
        assert r not in g.neighbors[r]
        for q in g.neighbors[r]:
            assert r in g.neighbors[q]
        assert bool(g.constructed.get(r)) == (not g.neighbors[r])
        assert g.state_of(r) == r[:2]
    m = g.neighborhood_matrix.toarray()
    assert np.array_equal(m.sum(axis=1), [len(g.neighborhood(r)) for r in g.regions])


def test_leading_zero_restored(tmp_path):
    (tmp_path / "a.csv").write_text("fips,neighbor_fips\n1001,1003\n")
    (tmp_path / "c.csv").write_text("fips,lat,lon\n1001,32.5,-86.6\n1003,30.7,-87.7\n")
    g = read_graph(tmp_path / "a.csv", tmp_path / "c.csv")
    assert g.regions == ("01001", "01003")
