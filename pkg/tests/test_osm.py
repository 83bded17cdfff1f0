from __future__ import annotations

import json
import math

import numpy as np
import pytest

from staykit.osm import (
    DEFAULT_BOX_SIZES,
    OsmBuilding,
    OsmError,
    OsmFeatureSet,
    OsmStreet,
    features_from_geojson,
    make_amenity,
    merge_feature_collections,
)
from staykit.projection import project, unproject


def square(cx, cy, half):
    return np.array([[cx - half, cy - half], [cx + half, cy - half], [cx + half, cy + half],
                     [cx - half, cy + half], [cx - half, cy - half]])


def random_features(rng, n=40, extent=1000.0):
    buildings, amenities, streets = [], [], []
    for i in range(n):
        cx, cy = rng.uniform(0, extent, 2)
        ring = square(cx, cy, rng.uniform(2, 30))
        buildings.append(OsmBuilding(f"b{i}", ring))
        if i % 2:
            amenities.append(make_amenity(f"a{i}", square(cx + 5, cy, rng.uniform(2, 30))))
        k = int(rng.integers(2, 5))
        line = rng.uniform(0, extent, (k, 2))
        streets.append(OsmStreet(f"s{i}", line, str(rng.choice(list(DEFAULT_BOX_SIZES)))))
    return OsmFeatureSet(buildings, amenities, streets)


def test_index_equals_brute_force(rng):
    fs = random_features(rng)
    xs, ys = rng.uniform(-50, 1050, 3000), rng.uniform(-50, 1050, 3000)
    assert np.array_equal(fs.building_hits(xs, ys, True), fs.building_hits(xs, ys, False))
    assert np.array_equal(fs.amenity_weights(xs, ys, True), fs.amenity_weights(xs, ys, False))
    assert np.array_equal(fs.street_hits(xs, ys, use_index=True), fs.street_hits(xs, ys, use_index=False))
    for kind, half in (("building", 0.0), ("amenity", 0.0), ("street", 20.0)):
        a = set(zip(*(v.tolist() for v in fs.candidates(kind, xs, ys, half))))
        b = set(zip(*(v.tolist() for v in fs.candidates(kind, xs, ys, half, brute=True))))
        assert a == b


def test_street_box_sizes_depend_on_level():
    fs = OsmFeatureSet(streets=[OsmStreet("m", np.array([[0, 0], [100, 0]]), "motorway"),
                                OsmStreet("s", np.array([[0, 100], [100, 100]]), "service")])
    # motorway box side 40 reaches 20 m, service box side 10 only 5 m
    xs = np.array([50, 50, 50, 50])
    ys = np.array([19.9, 20.1, 104.9, 105.1])
    assert fs.street_hits(xs, ys).tolist() == [True, False, True, False]
    custom = dict(DEFAULT_BOX_SIZES, service=30.0)
    assert fs.street_hits(xs, ys, custom).tolist() == [True, False, True, True]


def test_missing_box_size_rejected():
    fs = OsmFeatureSet(streets=[OsmStreet("m", np.array([[0, 0], [1, 0]]), "primary")])
    with pytest.raises(OsmError):
        fs.street_hits([0], [0], {"motorway": 40})


def test_unknown_level_rejected():
    with pytest.raises(OsmError):
        OsmStreet("x", np.zeros((2, 2)), "footway")


def test_amenity_weight_is_max_over_enclosing():
    small = make_amenity("s", square(0, 0, 1))  # area 4
    large = make_amenity("l", square(0, 0, 10))  # area 400
    fs = OsmFeatureSet(amenities=[small, large])
    mean = 202.0
    w = fs.amenity_weights([0, 5, 50], [0, 5, 50])
    assert w[0] == pytest.approx(math.exp(-4 / mean), abs=1e-12)
    assert w[1] == pytest.approx(math.exp(-400 / mean), abs=1e-12)
    assert w[2] == 0.0


def _collection(zone="50N"):
    def ring(cx, cy, half):
        xy = square(cx, cy, half)
        lat, lon = unproject(xy[:, 0], xy[:, 1], zone)
        return [[float(a), float(b)] for a, b in zip(lon, lat)]

    def line(points):
        xy = np.array(points, dtype=float)
        lat, lon = unproject(xy[:, 0], xy[:, 1], zone)
        return [[float(a), float(b)] for a, b in zip(lon, lat)]

    return {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "id": "way/1", "properties": {"building": "yes"},
             "geometry": {"type": "Polygon", "coordinates": [ring(440000, 4420000, 10)]}},
            {"type": "Feature", "id": "way/2", "properties": {"amenity": "school", "building": "school"},
             "geometry": {"type": "Polygon", "coordinates": [ring(440100, 4420000, 10)]}},
            {"type": "Feature", "id": "way/3", "properties": {"highway": "primary_link"},
             "geometry": {"type": "LineString", "coordinates": line([[440000, 4420100], [440200, 4420100]])}},
            {"type": "Feature", "id": "way/4", "properties": {"highway": "footway"},
             "geometry": {"type": "LineString", "coordinates": line([[440000, 4420300], [440200, 4420300]])}},
            {"type": "Feature", "id": "way/5", "properties": {"building": "yes"},
             "geometry": {"type": "Polygon", "coordinates": [[[116.0, 39.0], [116.1, 39.0], [116.0, 39.1]]]}},
            {"type": "Feature", "id": "way/6", "properties": {"building": "no"},
             "geometry": {"type": "Polygon", "coordinates": [ring(440500, 4420000, 10)]}},
            {"type": "Feature", "id": "rel/7", "properties": {"building": "yes"},
             "geometry": {"type": "MultiPolygon", "coordinates": [[ring(440900, 4420000, 5)], [ring(440950, 4420000, 5)]]}},
        ],
    }


def test_geojson_parsing():
    fs = features_from_geojson(_collection(), zone="50N")
    assert sorted(b.id for b in fs.buildings) == ["rel/7", "rel/7/1", "way/1", "way/2"]
    assert [a.id for a in fs.amenities] == ["way/2"]
    assert fs.amenities[0].area == pytest.approx(400.0, rel=1e-6)
    assert [(s.id, s.level) for s in fs.streets] == [("way/3", "primary")]
    assert fs.skipped == 1
    assert fs.building_hits([440000.0], [4420000.0]).tolist() == [True]


def test_geojson_from_text_and_path(tmp_path):
    coll = _collection()
    p = tmp_path / "m.geojson"
    p.write_text(json.dumps(coll))
    a = features_from_geojson(p, zone="50N")
    b = features_from_geojson(json.dumps(coll), zone="50N")
    assert len(a) == len(b) == 6
    auto = features_from_geojson(coll)
    assert str(auto.zone) == "50N"


def test_merge_drops_duplicate_ids():
    c = _collection()
    merged = merge_feature_collections([c, c])
    assert len(merged["features"]) == len(c["features"])


def test_empty_feature_set():
    fs = OsmFeatureSet()
    assert len(fs) == 0
    assert fs.building_hits([0.0], [0.0]).tolist() == [False]
    assert fs.amenity_weights([0.0], [0.0]).tolist() == [0.0]
    assert fs.street_hits([0.0], [0.0]).tolist() == [False]
