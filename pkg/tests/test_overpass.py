from __future__ import annotations

import json

import requests

from staykit.osm import features_from_geojson
from staykit.overpass import OverpassClient, build_query, default_cache_dir, to_geojson

PAYLOAD = {
    "elements": [
        {"type": "way", "id": 1, "tags": {"building": "yes"},
         "geometry": [{"lat": 39.9, "lon": 116.4}, {"lat": 39.9, "lon": 116.401},
                      {"lat": 39.901, "lon": 116.401}, {"lat": 39.9, "lon": 116.4}]},
        {"type": "way", "id": 2, "tags": {"highway": "residential"},
         "geometry": [{"lat": 39.91, "lon": 116.4}, {"lat": 39.91, "lon": 116.41}]},
        {"type": "way", "id": 3, "tags": {"building": "yes"},
         "geometry": [{"lat": 39.9, "lon": 116.4}, {"lat": 39.9, "lon": 116.401}]},
        {"type": "node", "id": 4, "lat": 39.9, "lon": 116.4},
    ]
}


class FakeResponse:
    def __init__(self, payload, status=200):
        self.payload = payload
        self.status = status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"status {self.status}")

    def json(self):
        return self.payload


class FakeSession:
    def __init__(self, response=None, error=None):
        self.response = response
        self.error = error
        self.calls = []

    def post(self, url, data=None, timeout=None):
        self.calls.append((url, data))
        if self.error is not None:
            raise self.error
        return self.response


def test_query_mentions_all_tag_families():
    q = build_query((39.9, 116.3, 40.0, 116.4))
    for tag in ("building", "amenity", "highway"):
        assert f'way["{tag}"]' in q
    assert "(39.9000000,116.3000000,40.0000000,116.4000000)" in q


def test_to_geojson():
    coll = to_geojson(PAYLOAD)
    assert [f["id"] for f in coll["features"]] == ["way/1", "way/2"]
    fs = features_from_geojson(coll, zone="50N")
    assert len(fs.buildings) == 1 and len(fs.streets) == 1


def test_fetch_caches(tmp_path):
    session = FakeSession(FakeResponse(PAYLOAD))
    client = OverpassClient(cache_dir=tmp_path, session=session)
    bbox = (39.9, 116.3, 40.0, 116.4)
    a = client.fetch(bbox)
    b = client.fetch(bbox)
    assert a == b
    assert len(session.calls) == 1
    assert client.cache_path(bbox).exists()
    assert json.loads(client.cache_path(bbox).read_text()) == a


def test_fetch_failure_is_soft(tmp_path, caplog):
    client = OverpassClient(cache_dir=tmp_path, session=FakeSession(error=requests.ConnectionError("down")))
    assert client.fetch((0, 0, 1, 1)) == {"type": "FeatureCollection", "features": []}
    assert "failed" in caplog.text
    assert not client.cache_path((0, 0, 1, 1)).exists()
    bad = OverpassClient(cache_dir=tmp_path, session=FakeSession(FakeResponse({}, status=504)))
    assert bad.fetch((0, 0, 1, 1))["features"] == []


def test_cache_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("STAYKIT_CACHE_DIR", str(tmp_path))
    assert default_cache_dir() == tmp_path
