"""OSM building / amenity / street features behind an envelope index."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely

from . import geometry
from .projection import UtmZone, project

log = logging.getLogger(__name__)

STREET_LEVELS = ("motorway", "trunk", "primary", "secondary", "tertiary", "residential", "service")

DEFAULT_BOX_SIZES = {
    "motorway": 40.0,
    "trunk": 35.0,
    "primary": 30.0,
    "secondary": 25.0,
    "tertiary": 20.0,
    "residential": 15.0,
    "service": 10.0,
}

# highway=* values folded onto the importance tiers; anything else is not a street
HIGHWAY_TIERS = {
    "motorway": "motorway",
    "motorway_link": "motorway",
    "trunk": "trunk",
    "trunk_link": "trunk",
    "primary": "primary",
    "primary_link": "primary",
    "secondary": "secondary",
    "secondary_link": "secondary",
    "tertiary": "tertiary",
    "tertiary_link": "tertiary",
    "residential": "residential",
    "living_street": "residential",
    "unclassified": "residential",
    "road": "residential",
    "service": "service",
}

_ENVELOPE_PAD = 1e-6


class OsmError(ValueError):
    pass


@dataclass(frozen=True)
class OsmBuilding:
    id: str
    xy: np.ndarray
    holes: tuple = ()
    latlon: np.ndarray | None = None


@dataclass(frozen=True)
class OsmAmenity:
    id: str
    xy: np.ndarray
    area: float
    holes: tuple = ()
    latlon: np.ndarray | None = None


@dataclass(frozen=True)
class OsmStreet:
    id: str
    xy: np.ndarray
    level: str
    latlon: np.ndarray | None = None

    def __post_init__(self):
        if self.level not in STREET_LEVELS:
            raise OsmError(f"unknown street level {self.level!r}")


def make_amenity(id, xy, holes=(), latlon=None) -> OsmAmenity:
    xy = np.asarray(xy, dtype=float)
    return OsmAmenity(str(id), xy, geometry.polygon_area(xy, holes), tuple(holes), latlon)


def _envelopes(rings):
    arr = np.array([[r[:, 0].min(), r[:, 1].min(), r[:, 0].max(), r[:, 1].max()] for r in rings], dtype=float).reshape(-1, 4)
    arr[:, :2] -= _ENVELOPE_PAD
    arr[:, 2:] += _ENVELOPE_PAD
    return arr


class _EnvelopeIndex:
    """Axis-aligned envelope index; candidate pairs are a superset of true hits."""

    def __init__(self, rings):
        self.size = len(rings)
        self.boxes = _envelopes(rings) if rings else np.zeros((0, 4))
        self.tree = shapely.STRtree(shapely.box(*self.boxes.T)) if rings else None

    def query(self, xs, ys, half=0.0):
        """``(point_idx, feature_idx)`` pairs whose envelopes overlap the query boxes."""
        if self.tree is None or len(xs) == 0:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        if np.isscalar(half) and half == 0:
            geoms = shapely.points(xs, ys)
        else:
            geoms = shapely.box(xs - half, ys - half, xs + half, ys + half)
        pairs = self.tree.query(geoms)
        return pairs[0], pairs[1]

    def query_brute(self, xs, ys, half=0.0):
        b = self.boxes
        hit = (
            (xs[:, None] + half >= b[None, :, 0])
            & (xs[:, None] - half <= b[None, :, 2])
            & (ys[:, None] + half >= b[None, :, 1])
            & (ys[:, None] - half <= b[None, :, 3])
        )
        return np.nonzero(hit)


@dataclass
class OsmFeatureSet:
    """Immutable collection of projected OSM features with envelope indexes."""

    buildings: list[OsmBuilding] = field(default_factory=list)
    amenities: list[OsmAmenity] = field(default_factory=list)
    streets: list[OsmStreet] = field(default_factory=list)
    zone: UtmZone | None = None
    skipped: int = 0

    def __post_init__(self):
        self.buildings = list(self.buildings)
        self.amenities = list(self.amenities)
        self.streets = list(self.streets)
        self._building_index = _EnvelopeIndex([b.xy for b in self.buildings])
        self._amenity_index = _EnvelopeIndex([a.xy for a in self.amenities])
        self._street_index = _EnvelopeIndex([s.xy for s in self.streets])
        self._amenity_area = np.array([a.area for a in self.amenities])
        self.mean_amenity_area = float(self._amenity_area.mean()) if self.amenities else 0.0

    def __len__(self):
        return len(self.buildings) + len(self.amenities) + len(self.streets)

    # candidate pairs ---------------------------------------------------

    def candidates(self, kind: str, xs, ys, half=0.0, brute: bool = False):
        index = {"building": self._building_index, "amenity": self._amenity_index, "street": self._street_index}[kind]
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        return index.query_brute(xs, ys, half) if brute else index.query(xs, ys, half)

    @staticmethod
    def _grouped(pairs):
        pts, feats = pairs
        if len(feats) == 0:
            return
        order = np.argsort(feats, kind="stable")
        pts, feats = pts[order], feats[order]
        bounds = np.flatnonzero(np.diff(feats)) + 1
        for p, f in zip(np.split(pts, bounds), np.split(feats, bounds)):
            yield int(f[0]), p

    def _all_pairs(self, n_points, n_features):
        return (
            np.repeat(np.arange(n_points), n_features),
            np.tile(np.arange(n_features), n_points),
        )

    # labelling queries -------------------------------------------------

    def building_hits(self, xs, ys, use_index: bool = True) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        hit = np.zeros(len(xs), dtype=bool)
        pairs = self.candidates("building", xs, ys) if use_index else self._all_pairs(len(xs), len(self.buildings))
        for f, pts in self._grouped(pairs):
            todo = pts[~hit[pts]]
            if len(todo):
                b = self.buildings[f]
                hit[todo] |= geometry.points_in_polygon(xs[todo], ys[todo], b.xy, b.holes)
        return hit

    def amenity_weights(self, xs, ys, use_index: bool = True) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        w = np.zeros(len(xs))
        if not self.amenities:
            return w
        mean = self.mean_amenity_area
        pairs = self.candidates("amenity", xs, ys) if use_index else self._all_pairs(len(xs), len(self.amenities))
        for f, pts in self._grouped(pairs):
            a = self.amenities[f]
            inside = geometry.points_in_polygon(xs[pts], ys[pts], a.xy, a.holes)
            weight = 1.0 if mean <= 0 else float(np.exp(-a.area / mean))
            sel = pts[inside]
            w[sel] = np.maximum(w[sel], weight)
        return w

    def street_hits(self, xs, ys, box_sizes=None, use_index: bool = True) -> np.ndarray:
        box_sizes = DEFAULT_BOX_SIZES if box_sizes is None else box_sizes
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        hit = np.zeros(len(xs), dtype=bool)
        if not self.streets:
            return hit
        missing = {s.level for s in self.streets} - set(box_sizes)
        if missing:
            raise OsmError(f"no box size for street levels {sorted(missing)}")
        max_half = max(float(box_sizes[s.level]) for s in self.streets) / 2
        if use_index:
            pairs = self.candidates("street", xs, ys, half=max_half)
        else:
            pairs = self._all_pairs(len(xs), len(self.streets))
        for f, pts in self._grouped(pairs):
            todo = pts[~hit[pts]]
            if len(todo):
                s = self.streets[f]
                half = float(box_sizes[s.level]) / 2
                hit[todo] |= geometry.polyline_hits_boxes(s.xy, xs[todo], ys[todo], half)
        return hit


# -- GeoJSON ingest ----------------------------------------------------------


def _tags(feature):
    props = feature.get("properties") or {}
    tags = props.get("tags")
    return tags if isinstance(tags, dict) else props


def _polygons(geom):
    kind = geom.get("type")
    if kind == "Polygon":
        return [geom["coordinates"]]
    if kind == "MultiPolygon":
        return list(geom["coordinates"])
    return []


def _lines(geom):
    kind = geom.get("type")
    if kind == "LineString":
        return [geom["coordinates"]]
    if kind == "MultiLineString":
        return list(geom["coordinates"])
    return []


def _to_xy(coords, zone):
    lonlat = np.asarray(coords, dtype=float)[:, :2]
    x, y = project(lonlat[:, 1], lonlat[:, 0], zone)
    return np.column_stack([x, y]), lonlat[:, ::-1].copy()


def features_from_geojson(data, zone=None) -> OsmFeatureSet:
    """Build a feature set from a GeoJSON FeatureCollection (dict, text or path).

    Polygons tagged ``building`` become buildings, polygons tagged ``amenity``
    amenities, line strings tagged ``highway`` streets. Invalid rings are
    skipped and counted in ``skipped``.
    """
    if isinstance(data, (str, Path)) and Path(str(data)).exists():
        data = json.loads(Path(data).read_text(encoding="utf-8"))
    elif isinstance(data, str):
        data = json.loads(data)
    feats = data.get("features", [])
    if zone is None:
        lons, lats = [], []
        for f in feats:
            geom = f.get("geometry") or {}
            for poly in _polygons(geom):
                lons.append(poly[0][0][0])
                lats.append(poly[0][0][1])
            for line in _lines(geom):
                lons.append(line[0][0])
                lats.append(line[0][1])
        zone = UtmZone.for_location(float(np.mean(lats)), float(np.mean(lons))) if lats else UtmZone(50)
    zone = UtmZone.parse(zone)

    buildings, amenities, streets = [], [], []
    skipped = 0
    for k, f in enumerate(feats):
        geom = f.get("geometry") or {}
        tags = _tags(f)
        fid = str(f.get("id", tags.get("id", k)))
        is_building = "building" in tags and str(tags["building"]).lower() != "no"
        is_amenity = "amenity" in tags
        if is_building or is_amenity:
            for j, poly in enumerate(_polygons(geom)):
                rings = [np.asarray(r, dtype=float) for r in poly]
                if not rings or not all(geometry.is_valid_ring(r[:, :2] if r.ndim == 2 else r) for r in rings):
                    skipped += 1
                    continue
                ext, ext_ll = _to_xy(rings[0], zone)
                holes = tuple(_to_xy(r, zone)[0] for r in rings[1:])
                pid = fid if j == 0 else f"{fid}/{j}"
                if is_building:
                    buildings.append(OsmBuilding(pid, ext, holes, ext_ll))
                if is_amenity:
                    amenities.append(make_amenity(pid, ext, holes, ext_ll))
        highway = tags.get("highway")
        if highway is not None:
            level = HIGHWAY_TIERS.get(str(highway))
            if level is None:
                continue
            for j, line in enumerate(_lines(geom)):
                arr = np.asarray(line, dtype=float)
                if arr.ndim != 2 or len(arr) < 2 or not np.all(np.isfinite(arr)):
                    skipped += 1
                    continue
                xy, ll = _to_xy(arr, zone)
                streets.append(OsmStreet(fid if j == 0 else f"{fid}/{j}", xy, level, ll))
    if skipped:
        log.warning("skipped %d invalid OSM geometries", skipped)
    return OsmFeatureSet(buildings, amenities, streets, zone, skipped)


def merge_feature_collections(collections) -> dict:
    """Concatenate GeoJSON FeatureCollections, dropping duplicate feature ids."""
    seen = set()
    out = []
    for coll in collections:
        for f in coll.get("features", []):
            fid = f.get("id")
            if fid is not None:
                if fid in seen:
                    continue
                seen.add(fid)
            out.append(f)
    return {"type": "FeatureCollection", "features": out}
