"""Heuristic labelling functions and their ensemble into weak stay labels."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .osm import OsmFeatureSet
from .trajectory import LocationPoint, Trajectory

HEURISTICS = ("building", "amenity", "street", "transport")
STAY_CONSTANT = {"building": 1.0, "amenity": 1.0, "street": 0.0, "transport": 0.0}

GEOLIFE_MODES = (
    "walking", "running", "biking", "motorcycle", "car", "taxi",
    "bus", "train", "subway", "boat", "airplane",
)
NON_MOTORIZED = frozenset({"walking", "running", "biking"})
MODE_ALIASES = {"walk": "walking", "run": "running", "bike": "biking", "plane": "airplane"}


class UnknownModeError(ValueError):
    pass


def normalize_mode(mode: str) -> str:
    key = str(mode).strip().lower()
    key = MODE_ALIASES.get(key, key)
    if key not in GEOLIFE_MODES:
        raise UnknownModeError(f"unknown transportation mode {mode!r}")
    return key


@dataclass(frozen=True)
class WeakLabel:
    c_weak: float
    w_weak: float


def label_building(point: LocationPoint, features: OsmFeatureSet) -> int:
    return int(features.building_hits([point.x], [point.y])[0])


def label_amenity(point: LocationPoint, features: OsmFeatureSet) -> float:
    return float(features.amenity_weights([point.x], [point.y])[0])


def label_street(point: LocationPoint, features: OsmFeatureSet, box_sizes: Mapping[str, float] | None = None) -> int:
    return int(features.street_hits([point.x], [point.y], box_sizes)[0])


def label_transport(point: LocationPoint | None, mode: str | None) -> int:
    if mode is None or (isinstance(mode, float) and math.isnan(mode)) or mode == "":
        return 0
    return int(normalize_mode(mode) not in NON_MOTORIZED)


def combine_weights(weights: Mapping[str, float]) -> WeakLabel:
    """Confidence-weighted mean of the heuristics' class constants, plus total weight."""
    total = sum(float(weights.get(h, 0.0)) for h in HEURISTICS)
    if total <= 0:
        return WeakLabel(0.5, 0.0)
    c = sum(STAY_CONSTANT[h] * float(weights.get(h, 0.0)) for h in HEURISTICS) / total
    return WeakLabel(c, total)


def combine(
    point: LocationPoint,
    features: OsmFeatureSet | None,
    mode: str | None = None,
    box_sizes: Mapping[str, float] | None = None,
) -> WeakLabel:
    weights = {"transport": label_transport(point, mode)}
    if features is not None:
        weights["building"] = label_building(point, features)
        weights["amenity"] = label_amenity(point, features)
        weights["street"] = label_street(point, features, box_sizes)
    return combine_weights(weights)


@dataclass
class TrajectoryWeakLabels:
    """Weak labels of one trajectory as arrays, with per-heuristic weights kept."""

    c_weak: np.ndarray
    w_weak: np.ndarray
    components: dict[str, np.ndarray]

    def __len__(self):
        return len(self.c_weak)

    def __getitem__(self, i) -> WeakLabel:
        return WeakLabel(float(self.c_weak[i]), float(self.w_weak[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def combine_arrays(components: Mapping[str, np.ndarray]) -> TrajectoryWeakLabels:
    n = len(next(iter(components.values())))
    comps = {h: np.asarray(components.get(h, np.zeros(n)), dtype=float) for h in HEURISTICS}
    total = sum(comps[h] for h in HEURISTICS)
    stay = sum(STAY_CONSTANT[h] * comps[h] for h in HEURISTICS)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(total > 0, stay / np.where(total > 0, total, 1.0), 0.5)
    return TrajectoryWeakLabels(c, total, comps)


def label_trajectory(
    traj: Trajectory,
    features: OsmFeatureSet | None,
    annotations: Sequence | None = None,
    box_sizes: Mapping[str, float] | None = None,
    use_index: bool = True,
) -> TrajectoryWeakLabels:
    """Apply all heuristics to every point of ``traj``.

    ``annotations`` defaults to ``traj.modes``. With ``use_index=False`` every
    feature is tested against every point, which is slow but index-free.
    """
    n = len(traj)
    if annotations is None:
        annotations = traj.modes
    comps = {h: np.zeros(n) for h in HEURISTICS}
    if annotations is not None:
        comps["transport"] = np.array([label_transport(None, m) for m in annotations], dtype=float)
    if features is not None and n:
        comps["building"] = features.building_hits(traj.x, traj.y, use_index).astype(float)
        comps["amenity"] = features.amenity_weights(traj.x, traj.y, use_index)
        comps["street"] = features.street_hits(traj.x, traj.y, box_sizes, use_index).astype(float)
    return combine_arrays(comps)


def weight_masses(labels: Sequence[TrajectoryWeakLabels]) -> dict[str, float]:
    """Total confidence weight contributed by each heuristic."""
    return {h: float(sum(lab.components[h].sum() for lab in labels)) for h in HEURISTICS}


def format_mass_table(masses: Mapping[str, float]) -> str:
    def fmt(v):
        if v >= 1e6:
            return f"{v / 1e6:.1f} M"
        if v >= 1e3:
            return f"{v / 1e3:.1f} k"
        return f"{v:.1f}"

    rows = [
        ("weak label", "heuristic", "total confidence weight"),
        ("stays (c_weak=1)", "building", fmt(masses["building"])),
        ("", "amenity", fmt(masses["amenity"])),
        ("non-stays (c_weak=0)", "street", fmt(masses["street"])),
        ("", "transport", fmt(masses["transport"])),
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def write_weak_labels(path, trajectories: Sequence[Trajectory], labels: Sequence[TrajectoryWeakLabels]) -> None:
    """Tab-separated ``user_id, t, c_weak, w_weak``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tr, lab in zip(trajectories, labels):
            for i in range(len(tr)):
                fh.write(f"{tr.user_id}\t{tr.t[i]:.3f}\t{lab.c_weak[i]:.6f}\t{lab.w_weak[i]:.6f}\n")


def read_weak_labels(path, trajectories: Sequence[Trajectory]) -> list[TrajectoryWeakLabels]:
    """Weak labels aligned with ``trajectories`` (same row order as written)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) == 4:
                rows.append((float(parts[2]), float(parts[3])))
    total = sum(len(tr) for tr in trajectories)
    if len(rows) != total:
        raise ValueError(f"{path}: {len(rows)} weak labels for {total} points")
    arr = np.array(rows).reshape(-1, 2)
    out, pos = [], 0
    for tr in trajectories:
        part = arr[pos : pos + len(tr)]
        pos += len(tr)
        out.append(TrajectoryWeakLabels(part[:, 0].copy(), part[:, 1].copy(), {}))
    return out
