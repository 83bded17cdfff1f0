"""Minimal Overpass API client with an on-disk response cache."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

import requests

log = logging.getLogger(__name__)

DEFAULT_URL = "https://overpass-api.de/api/interpreter"


def default_cache_dir() -> Path:
    return Path(os.environ.get("STAYKIT_CACHE_DIR", Path.home() / ".cache" / "staykit"))


def build_query(bbox, timeout: int = 180) -> str:
    """Query for buildings, amenities and highways in ``(south, west, north, east)``."""
    s, w, n, e = (f"{v:.7f}" for v in bbox)
    box = f"({s},{w},{n},{e})"
    return (
        f"[out:json][timeout:{timeout}];\n"
        f"(\n  way[\"building\"]{box};\n  way[\"amenity\"]{box};\n  way[\"highway\"]{box};\n);\n"
        "out geom;"
    )


def to_geojson(payload: dict) -> dict:
    """Convert an Overpass ``out geom`` response to a GeoJSON FeatureCollection."""
    features = []
    for el in payload.get("elements", []):
        if el.get("type") != "way" or "geometry" not in el:
            continue
        coords = [[p["lon"], p["lat"]] for p in el["geometry"]]
        tags = el.get("tags", {})
        closed = len(coords) >= 4 and coords[0] == coords[-1]
        if ("building" in tags or "amenity" in tags) and closed:
            geom = {"type": "Polygon", "coordinates": [coords]}
        elif "highway" in tags:
            geom = {"type": "LineString", "coordinates": coords}
        else:
            continue
        features.append({"type": "Feature", "id": f"way/{el['id']}", "properties": tags, "geometry": geom})
    return {"type": "FeatureCollection", "features": features}


class OverpassClient:
    def __init__(self, url: str = DEFAULT_URL, cache_dir=None, timeout: int = 180, session=None):
        self.url = url
        self.cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir() / "overpass"
        self.timeout = timeout
        self.session = session or requests.Session()

    def cache_path(self, bbox) -> Path:
        key = hashlib.sha256(build_query(bbox, self.timeout).encode("utf-8")).hexdigest()[:32]
        return self.cache_dir / f"{key}.json"

    def fetch(self, bbox) -> dict:
        """GeoJSON of the three tag families in ``bbox``; cached per bounding box.

        Network errors fall back to the cache, or to an empty collection, with a warning.
        """
        path = self.cache_path(bbox)
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        try:
            resp = self.session.post(self.url, data={"data": build_query(bbox, self.timeout)}, timeout=self.timeout)
            resp.raise_for_status()
            collection = to_geojson(resp.json())
        except (requests.RequestException, ValueError) as exc:
            log.warning("Overpass request for %s failed (%s); continuing without map data", bbox, exc)
            return {"type": "FeatureCollection", "features": []}
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(collection, sort_keys=True), encoding="utf-8")
        return collection
