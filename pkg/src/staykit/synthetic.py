"""Synthetic stay/move trajectories, matching OSM maps and fake dataset trees.

Used by the test-suite and for toy end-to-end runs of the command line tool.
"""
from __future__ import annotations

import gzip
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import EXCEL_EPOCH_OFFSET_DAYS
from .projection import UtmZone, unproject
from .trajectory import NON_STAY, STAY, Trajectory

ZONE = UtmZone(50)
ORIGIN = (440000.0, 4420000.0)  # Beijing, UTM 50N
START_EPOCH = 1199145600.0  # 2008-01-01T00:00:00Z

MODE_SPEEDS = {"walk": (1.0, 1.8), "bike": (3.0, 5.5), "bus": (6.0, 9.0), "car": (10.0, 16.0), "train": (18.0, 28.0)}


@dataclass
class Visit:
    """One stay or one leg of a synthetic trajectory, as inclusive point indices."""

    kind: str
    start: int
    stop: int
    a: tuple
    b: tuple
    mode: str | None = None


@dataclass
class SyntheticTrajectory:
    traj: Trajectory
    visits: list = field(default_factory=list)


def _to_latlon(x, y):
    lat, lon = unproject(np.asarray(x, dtype=float), np.asarray(y, dtype=float), ZONE)
    return np.atleast_1d(lat), np.atleast_1d(lon)


def generate_trajectory(
    user_id: str,
    num_points: int,
    rng: np.random.Generator,
    t0: float = START_EPOCH,
    speed_range: tuple = (3.0, 15.0),
    stay_noise: float = 1.0,
    dt_choices: Sequence[int] = (4, 5, 6),
    stay_duration: tuple = (300.0, 1200.0),
    leg_length: tuple = (300.0, 1500.0),
    modes: Sequence[str] | None = None,
    origin: tuple = ORIGIN,
) -> SyntheticTrajectory:
    """Alternating stays (tight cluster, near zero velocity) and straight legs.

    Stays last ``stay_duration`` seconds with Gaussian jitter of ``stay_noise``
    metres; legs are travelled at a constant speed drawn from ``speed_range``
    (or from the mode's range when ``modes`` is given). Labels are 1 on stays.
    """
    t, x, y, lab, mode_col = [], [], [], [], []
    visits: list[Visit] = []
    now = float(t0)
    cx, cy = origin[0] + rng.uniform(-2000, 2000), origin[1] + rng.uniform(-2000, 2000)
    kind = "stay"
    while len(t) < num_points:
        start = len(t)
        if kind == "stay":
            dur = rng.uniform(*stay_duration)
            end_time = now + dur
            while now < end_time and len(t) < num_points:
                t.append(now)
                x.append(cx + rng.normal(0, stay_noise))
                y.append(cy + rng.normal(0, stay_noise))
                lab.append(STAY)
                mode_col.append(None)
                now += float(rng.choice(dt_choices))
            visits.append(Visit("stay", start, len(t) - 1, (cx, cy), (cx, cy)))
            kind = "move"
        else:
            mode = None if modes is None else str(rng.choice(modes))
            lo, hi = speed_range if mode is None else MODE_SPEEDS[mode]
            speed = rng.uniform(lo, hi)
            length = rng.uniform(*leg_length)
            heading = rng.uniform(0, 2 * math.pi)
            nx, ny = cx + length * math.cos(heading), cy + length * math.sin(heading)
            t_leg = now
            travelled = 0.0
            while travelled < length and len(t) < num_points:
                f = travelled / length
                t.append(now)
                x.append(cx + f * (nx - cx))
                y.append(cy + f * (ny - cy))
                lab.append(NON_STAY)
                mode_col.append(mode)
                dt = float(rng.choice(dt_choices))
                now += dt
                travelled = speed * (now - t_leg)
            visits.append(Visit("move", start, len(t) - 1, (cx, cy), (nx, ny), mode))
            cx, cy = nx, ny
            kind = "stay"
    lat, lon = _to_latlon(x, y)
    traj = Trajectory(
        user_id, t, x, y, lat, lon,
        modes=np.array(mode_col, dtype=object) if modes is not None else None,
        labels=np.array(lab, dtype=float),
    )
    return SyntheticTrajectory(traj, visits)


def generate_corpus(
    num_users: int = 10,
    points_per_user: int = 5120,
    seed: int = 0,
    **kwargs,
) -> list[SyntheticTrajectory]:
    """``num_users`` trajectories; 10 users x 5120 points make 200 windows of 256."""
    rng = np.random.default_rng(seed)
    return [generate_trajectory(f"u{u:03d}", points_per_user, rng, **kwargs) for u in range(num_users)]


# -- matching map -------------------------------------------------------------------


@dataclass
class SyntheticMap:
    collection: dict
    noisy_stays: int = 0
    noisy_legs: int = 0
    stays: int = 0
    legs: int = 0


def _square(cx, cy, half):
    xs = np.array([cx - half, cx + half, cx + half, cx - half, cx - half])
    ys = np.array([cy - half, cy - half, cy + half, cy + half, cy - half])
    return xs, ys


def _strip(ax, ay, bx, by, half_width):
    """Rectangle of the given half width around segment a-b (closed ring)."""
    length = math.hypot(bx - ax, by - ay)
    ux, uy = (bx - ax) / length, (by - ay) / length
    px, py = -uy * half_width, ux * half_width
    xs = np.array([ax + px, bx + px, bx - px, ax - px, ax + px])
    ys = np.array([ay + py, by + py, by - py, ay - py, ay + py])
    return xs, ys


def _polygon_feature(fid, xs, ys, tags):
    lat, lon = _to_latlon(xs, ys)
    coords = [[float(a), float(b)] for a, b in zip(lon, lat)]
    return {"type": "Feature", "id": fid, "properties": tags, "geometry": {"type": "Polygon", "coordinates": [coords]}}


def _line_feature(fid, xs, ys, tags):
    lat, lon = _to_latlon(xs, ys)
    coords = [[float(a), float(b)] for a, b in zip(lon, lat)]
    return {"type": "Feature", "id": fid, "properties": tags, "geometry": {"type": "LineString", "coordinates": coords}}


def synthetic_map(
    corpus: Sequence[SyntheticTrajectory],
    noise: float = 0.2,
    seed: int = 0,
    building_side: float = 20.0,
    street_margin: float = 30.0,
    street_level: str = "residential",
    amenity_fraction: float = 0.25,
) -> SyntheticMap:
    """OSM-like features whose heuristics reproduce the ground truth up to ``noise``.

    Each stay gets a ``building_side`` square building (some also an amenity),
    each leg a street stopping ``street_margin`` metres short of both ends. A
    ``noise`` fraction of stays instead get a street through them, and the same
    fraction of legs a long building along them, so those points are labelled
    with the wrong class.
    """
    rng = np.random.default_rng(seed)
    feats = []
    result = SyntheticMap({})
    for st in corpus:
        for k, v in enumerate(st.visits):
            fid = f"{st.traj.user_id}/{k}"
            flip = rng.random() < noise
            if v.kind == "stay":
                result.stays += 1
                cx, cy = v.a
                if flip:
                    result.noisy_stays += 1
                    xs = np.array([cx - 50.0, cx + 50.0])
                    feats.append(_line_feature(f"way/{fid}", xs, np.array([cy, cy]), {"highway": street_level}))
                    continue
                xs, ys = _square(cx, cy, building_side / 2)
                feats.append(_polygon_feature(f"way/{fid}", xs, ys, {"building": "yes"}))
                if rng.random() < amenity_fraction:
                    feats.append(_polygon_feature(f"way/{fid}a", xs, ys, {"amenity": "cafe"}))
            else:
                result.legs += 1
                (ax, ay), (bx, by) = v.a, v.b
                length = math.hypot(bx - ax, by - ay)
                if length <= 2 * street_margin:
                    continue
                f0, f1 = street_margin / length, 1 - street_margin / length
                sx, sy = ax + f0 * (bx - ax), ay + f0 * (by - ay)
                ex, ey = ax + f1 * (bx - ax), ay + f1 * (by - ay)
                if flip:
                    result.noisy_legs += 1
                    xs, ys = _strip(sx, sy, ex, ey, 10.0)
                    feats.append(_polygon_feature(f"way/{fid}", xs, ys, {"building": "yes"}))
                else:
                    feats.append(
                        _line_feature(f"way/{fid}", np.array([sx, ex]), np.array([sy, ey]), {"highway": street_level})
                    )
    result.collection = {"type": "FeatureCollection", "features": feats}
    return result


def realized_noise(truth: Sequence[np.ndarray], c_weak: Sequence[np.ndarray], w_weak: Sequence[np.ndarray]) -> float:
    """Weight-share of weakly labelled points whose label points to the wrong class."""
    wrong = total = 0.0
    for y, c, w in zip(truth, c_weak, w_weak):
        sel = w > 0
        total += w[sel].sum()
        wrong += w[sel][(c[sel] >= 0.5) != (y[sel] == STAY)].sum()
    return wrong / total if total else 0.0


def write_geojson(path, collection: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(collection, sort_keys=True), encoding="utf-8")
    return path


# -- fake dataset trees ------------------------------------------------------------


def _stamp(t: float):
    g = time.gmtime(int(t))
    return time.strftime("%Y-%m-%d", g), time.strftime("%H:%M:%S", g)


def write_geolife_tree(root, trajectories: Sequence[Trajectory], mode_ranges: bool = True) -> Path:
    """GeoLife-style ``Data/<user>/Trajectory/*.plt`` files (one per trajectory).

    With ``mode_ranges`` a ``labels.txt`` is written from the trajectories' mode
    annotations (maximal runs of one mode).
    """
    root = Path(root)
    for tr in trajectories:
        user_dir = root / "Data" / tr.user_id
        plt_dir = user_dir / "Trajectory"
        plt_dir.mkdir(parents=True, exist_ok=True)
        name = time.strftime("%Y%m%d%H%M%S", time.gmtime(int(tr.t[0]))) + ".plt"
        lines = [
            "Geolife trajectory", "WGS 84", "Altitude is in Feet", "Reserved 3",
            "0,2,255,My Track,0,0,2,8421376", "0",
        ]
        for i in range(len(tr)):
            date, clock = _stamp(tr.t[i])
            days = tr.t[i] / 86400.0 + EXCEL_EPOCH_OFFSET_DAYS
            lines.append(f"{tr.lat[i]:.9f},{tr.lon[i]:.9f},0,150,{days:.10f},{date},{clock}")
        (plt_dir / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
        if mode_ranges and tr.modes is not None:
            rows = []
            modes = tr.modes
            i = 0
            while i < len(tr):
                if modes[i] is None:
                    i += 1
                    continue
                j = i
                while j + 1 < len(tr) and modes[j + 1] == modes[i]:
                    j += 1
                a, b = _stamp(tr.t[i]), _stamp(tr.t[j])
                rows.append(f"{a[0].replace('-', '/')} {a[1]}\t{b[0].replace('-', '/')} {b[1]}\t{modes[i]}")
                i = j + 1
            labels = user_dir / "labels.txt"
            old = labels.read_text(encoding="utf-8").splitlines()[1:] if labels.exists() else []
            labels.write_text("\n".join(["Start Time\tEnd Time\tTransportation Mode"] + old + rows) + "\n", encoding="utf-8")
    return root


ES_STAY_ACTIVITIES = (("SITTING", "LOC_home"), ("LYING_DOWN",), ("SITTING", "WATCHING_TV"), ("LOC_main_workplace",))
ES_MOVE_ACTIVITIES = (("FIX_walking",), ("IN_A_CAR", "DRIVE_-_I_M_THE_DRIVER"), ("BICYCLING",), ("ON_A_BUS",))
ES_LABEL_COLUMNS = sorted(
    {a for group in ES_STAY_ACTIVITIES + ES_MOVE_ACTIVITIES for a in group} | {"PHONE_ON_TABLE"}
)


def write_extrasensory_tree(root, trajectories: Sequence[Trajectory], seed: int = 0, conflict_rate: float = 0.0) -> Path:
    """Per-user ``<uuid>.features_labels.csv.gz`` plus ``<uuid>.absolute_locations.csv.gz``.

    Activity tags are drawn to match each point's ground-truth label; a
    ``conflict_rate`` fraction get one stay and one move tag at once.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    by_user: dict[str, list[Trajectory]] = {}
    for tr in trajectories:
        by_user.setdefault(tr.user_id, []).append(tr)
    for user, trs in by_user.items():
        feat_lines = ["timestamp,raw_acc:magnitude_stats:mean," + ",".join(f"label:{c}" for c in ES_LABEL_COLUMNS)]
        loc_lines = ["timestamp,latitude,longitude"]
        for tr in trs:
            for i in range(len(tr)):
                y = tr.labels[i] if tr.labels is not None else np.nan
                if np.isnan(y):
                    acts = {"PHONE_ON_TABLE"}
                else:
                    pool = ES_STAY_ACTIVITIES if y == STAY else ES_MOVE_ACTIVITIES
                    acts = set(pool[int(rng.integers(len(pool)))])
                    if rng.random() < conflict_rate:
                        other = ES_MOVE_ACTIVITIES if y == STAY else ES_STAY_ACTIVITIES
                        acts |= set(other[int(rng.integers(len(other)))])
                ts = int(round(tr.t[i]))
                row = ",".join("1" if c in acts else "0" for c in ES_LABEL_COLUMNS)
                feat_lines.append(f"{ts},{rng.uniform(0.9, 1.1):.4f},{row}")
                loc_lines.append(f"{ts},{tr.lat[i]:.9f},{tr.lon[i]:.9f}")
        for name, lines in (("features_labels", feat_lines), ("absolute_locations", loc_lines)):
            with gzip.open(root / f"{user}.{name}.csv.gz", "wt", encoding="utf-8", newline="\n") as fh:
                fh.write("\n".join(lines) + "\n")
    return root


def resample(traj: Trajectory, period: float) -> Trajectory:
    """Keep the first point and then every point at least ``period`` seconds after the last kept one."""
    keep = [0]
    for i in range(1, len(traj)):
        if traj.t[i] - traj.t[keep[-1]] >= period:
            keep.append(i)
    return traj.take(np.array(keep))


def write_toy_workspace(root, users: int = 5, points_per_user: int = 600, seed: int = 0) -> Path:
    """A small GeoLife tree, ES tree, OSM file and config for trying the command line tool."""
    import yaml

    root = Path(root)
    rng = np.random.default_rng(seed)
    gl = [
        generate_trajectory(f"{u:03d}", points_per_user, rng, modes=("walk", "bike", "bus", "car", "train"))
        for u in range(users)
    ]
    es = [
        generate_trajectory(f"ES{u:02d}", max(points_per_user // 6, 40), rng, dt_choices=(57, 60, 61, 63),
                            t0=START_EPOCH + 86400 * 30, stay_duration=(900.0, 3600.0), leg_length=(1000.0, 4000.0))
        for u in range(users)
    ]
    write_geolife_tree(root / "geolife", [s.traj for s in gl])
    write_extrasensory_tree(root / "es", [s.traj for s in es], seed=seed, conflict_rate=0.05)
    osm = synthetic_map(gl, noise=0.2, seed=seed)
    write_geojson(root / "osm.geojson", osm.collection)
    config = {
        "data": {
            "geolife_root": str(root / "geolife"),
            "es_root": str(root / "es"),
            "osm_geojson": [str(root / "osm.geojson")],
            "utm_zone": "50N",
        },
        "model": {"seq_len": 64},
        "pretrain": {"epochs": 3, "lr": 1e-3, "batch_size": 16},
        "finetune": {"epochs": 3, "lr": 1e-3, "batch_size": 16},
        "tmd": {"epochs": 3, "lr": 1e-3, "batch_size": 16},
        "search": {"dstar_candidates": 4},
        "output_dir": str(root / "out"),
    }
    (root / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
    return root


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="Write a synthetic toy workspace.")
    parser.add_argument("root")
    parser.add_argument("--users", type=int, default=5)
    parser.add_argument("--points", type=int, default=600)
    parser.add_argument("--seed", type=int, default=0)
    a = parser.parse_args()
    print(write_toy_workspace(a.root, a.users, a.points, a.seed) / "config.yaml")
