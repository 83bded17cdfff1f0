"""Trajectory representation, cleaning, features, chunking and segment grouping."""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .projection import UtmZone, auto_zone, project

STAY = 1
NON_STAY = 0

DEFAULT_MAX_GAP = 1200.0
DEFAULT_MAX_SPEED = 350.0
DEFAULT_SEQ_LEN = 256


class TrajectoryError(ValueError):
    pass


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class LocationPoint:
    t: float
    x: float
    y: float
    raw_lat: float = math.nan
    raw_lon: float = math.nan


@dataclass
class Trajectory:
    """Column-oriented trajectory of a single user.

    ``modes`` holds optional transport-mode annotations (object array, ``None``
    where absent) and ``labels`` optional ground-truth stay labels (NaN where
    unlabeled). Both travel with the points through cleaning and slicing.
    """

    user_id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lat: np.ndarray | None = None
    lon: np.ndarray | None = None
    modes: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.user_id = str(self.user_id)
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        n = len(self.t)
        self.lat = np.full(n, np.nan) if self.lat is None else np.asarray(self.lat, dtype=float)
        self.lon = np.full(n, np.nan) if self.lon is None else np.asarray(self.lon, dtype=float)
        if self.modes is not None:
            self.modes = np.asarray(self.modes, dtype=object)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=float)
        for name in ("x", "y", "lat", "lon", "modes", "labels"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise TrajectoryError(f"column {name} has length {len(arr)}, expected {n}")
        if n:
            if not np.all(np.isfinite(self.t)) or self.t[0] < 0:
                raise TrajectoryError("timestamps must be finite and non-negative")
            if np.any(np.diff(self.t) <= 0):
                raise TrajectoryError("timestamps must be strictly ascending")
            if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
                raise TrajectoryError("projected coordinates must be finite")

    def __len__(self):
        return len(self.t)

    def point(self, i: int) -> LocationPoint:
        return LocationPoint(
            float(self.t[i]), float(self.x[i]), float(self.y[i]), float(self.lat[i]), float(self.lon[i])
        )

    @property
    def points(self) -> list[LocationPoint]:
        return [self.point(i) for i in range(len(self))]

    def take(self, idx) -> "Trajectory":
        idx = np.asarray(idx)
        return Trajectory(
            self.user_id,
            self.t[idx],
            self.x[idx],
            self.y[idx],
            self.lat[idx],
            self.lon[idx],
            None if self.modes is None else self.modes[idx],
            None if self.labels is None else self.labels[idx],
        )

    @classmethod
    def from_latlon(cls, user_id, t, lat, lon, zone=None, **extra) -> "Trajectory":
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        if zone is None:
            zone = auto_zone(lat, lon) if len(lat) else UtmZone(50)
        x, y = project(lat, lon, zone)
        return cls(user_id, t, np.atleast_1d(x), np.atleast_1d(y), lat, lon, **extra)

    @classmethod
    def from_points(cls, user_id, points: Sequence[LocationPoint]) -> "Trajectory":
        return cls(
            user_id,
            [p.t for p in points],
            [p.x for p in points],
            [p.y for p in points],
            [p.raw_lat for p in points],
            [p.raw_lon for p in points],
        )


def sort_and_dedupe(t) -> np.ndarray:
    """Index that sorts ``t`` and keeps the first of every repeated timestamp."""
    t = np.asarray(t, dtype=float)
    order = np.argsort(t, kind="stable")
    ts = t[order]
    keep = np.ones(len(ts), dtype=bool)
    keep[1:] = np.diff(ts) > 0
    return order[keep]


# -- cleaning ---------------------------------------------------------------


def _step_speeds(traj: Trajectory, i, j):
    return np.hypot(traj.x[j] - traj.x[i], traj.y[j] - traj.y[i]) / (traj.t[j] - traj.t[i])


def clean_and_split(
    traj: Trajectory, max_gap: float = DEFAULT_MAX_GAP, max_speed: float = DEFAULT_MAX_SPEED
) -> list[Trajectory]:
    """Drop points implying an unrealistic speed and split at long gaps.

    Each point is checked against the last kept point; a point that would need
    more than ``max_speed`` to reach is discarded and its neighbours re-linked.
    When the very first point of a piece is the culprit (its successor is too
    fast but agrees with the point after it) the first point is dropped instead.
    """
    n = len(traj)
    if n == 0:
        return []
    if n > 1:
        idx = np.arange(n)
        speeds = _step_speeds(traj, idx[:-1], idx[1:])
        if np.all(speeds <= max_speed):
            cuts = np.flatnonzero(np.diff(traj.t) > max_gap) + 1
            return [traj.take(part) for part in np.split(idx, cuts)]

    t, x, y = traj.t, traj.x, traj.y

    def plausible(i, j):
        dt = t[j] - t[i]
        return dt <= max_gap and math.hypot(x[j] - x[i], y[j] - y[i]) / dt <= max_speed

    pieces: list[list[int]] = [[0]]
    for i in range(1, n):
        piece = pieces[-1]
        anchor = piece[-1]
        if t[i] - t[anchor] > max_gap:
            pieces.append([i])
            continue
        if plausible(anchor, i):
            piece.append(i)
            continue
        if len(piece) == 1 and i + 1 < n and plausible(i, i + 1) and not plausible(anchor, i + 1):
            piece[0] = i
    return [traj.take(np.array(p)) for p in pieces]


# -- features ---------------------------------------------------------------


def compute_features(traj: Trajectory) -> np.ndarray:
    """Raw per-point features ``[x, y, dt, v]`` as an ``(N, 4)`` array.

    The first point has no predecessor: it gets the median step duration of the
    trajectory and zero velocity.
    """
    if len(traj) < 2:
        raise TrajectoryError("feature extraction needs at least two points")
    dt = np.diff(traj.t)
    if np.any(dt <= 0):
        raise TrajectoryError("duplicate or descending timestamps")
    step = np.hypot(np.diff(traj.x), np.diff(traj.y))
    feats = np.empty((len(traj), 4))
    feats[:, 0] = traj.x
    feats[:, 1] = traj.y
    feats[0, 2] = np.median(dt)
    feats[1:, 2] = dt
    feats[0, 3] = 0.0
    feats[1:, 3] = step / dt
    return feats


# -- windows ----------------------------------------------------------------


@dataclass
class SequenceWindow:
    """A fixed-length chunk of a trajectory ready for the encoder.

    ``rows`` columns are ``x, y, dt, v``. ``center`` is the subtracted mean
    position; ``next_step`` is the raw ``(dx, dy, dt)`` to the point following
    the window, or ``None`` at the end of a trajectory.
    """

    rows: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    mask: np.ndarray
    origin: tuple[str, int]
    center: tuple[float, float] = (0.0, 0.0)
    next_step: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.rows)
        if not (len(self.labels) == len(self.weights) == len(self.mask) == n):
            raise TrajectoryError("rows, labels, weights and mask must share one length")

    @property
    def n_real(self) -> int:
        return int(self.mask.sum())


def chunk(
    features: np.ndarray,
    labels=None,
    weights=None,
    n: int = DEFAULT_SEQ_LEN,
    user_id: str = "",
) -> list[SequenceWindow]:
    """Split aligned per-point arrays into non-overlapping windows of length ``n``.

    The last window is zero-padded (``mask`` False, weight 0). Positions are
    centred on the mean of the real rows of each window.
    """
    features = np.asarray(features, dtype=float)
    total = len(features)
    labels = np.zeros(total) if labels is None else np.asarray(labels, dtype=float)
    weights = np.ones(total) if weights is None else np.asarray(weights, dtype=float)
    windows = []
    for start in range(0, total, n):
        stop = min(start + n, total)
        k = stop - start
        rows = np.zeros((n, 4))
        rows[:k] = features[start:stop]
        center = rows[:k, :2].mean(axis=0)
        rows[:k, :2] -= center
        lab = np.zeros(n)
        lab[:k] = labels[start:stop]
        w = np.zeros(n)
        w[:k] = weights[start:stop]
        mask = np.zeros(n, dtype=bool)
        mask[:k] = True
        next_step = None
        if stop < total:
            next_step = np.array(
                [
                    features[stop, 0] - features[stop - 1, 0],
                    features[stop, 1] - features[stop - 1, 1],
                    features[stop, 2],
                ]
            )
        windows.append(
            SequenceWindow(rows, lab, w, mask, (user_id, start), (float(center[0]), float(center[1])), next_step)
        )
    return windows


def unchunk(windows: Iterable[SequenceWindow], values=None) -> np.ndarray:
    """Concatenate the real rows of ``windows`` (re-adding the centring offset).

    With ``values`` (one length-``n`` array per window) the matching real
    entries are concatenated instead, e.g. to map predictions back to points.
    """
    windows = list(windows)
    if values is not None:
        return np.concatenate([np.asarray(v)[w.mask] for w, v in zip(windows, values)]) if windows else np.zeros(0)
    parts = []
    for w in windows:
        rows = w.rows[w.mask].copy()
        rows[:, 0] += w.center[0]
        rows[:, 1] += w.center[1]
        parts.append(rows)
    return np.concatenate(parts) if parts else np.zeros((0, 4))


@dataclass(frozen=True)
class StandardizationStats:
    mean_dt: float
    std_dt: float
    mean_v: float
    std_v: float
    std_xy: float

    def __post_init__(self):
        for name in ("std_dt", "std_v", "std_xy"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise StatsError(f"{name} must be strictly positive, got {value}")

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("mean_dt", "std_dt", "mean_v", "std_v", "std_xy")}


def compute_stats(windows: Sequence[SequenceWindow]) -> StandardizationStats:
    """Standardisation statistics over the real rows of (already centred) training windows."""
    rows = np.concatenate([w.rows[w.mask] for w in windows]) if windows else np.zeros((0, 4))
    if len(rows) == 0:
        raise StatsError("no real rows to compute statistics from")
    xy = rows[:, :2].ravel()
    return StandardizationStats(
        mean_dt=float(rows[:, 2].mean()),
        std_dt=float(rows[:, 2].std()),
        mean_v=float(rows[:, 3].mean()),
        std_v=float(rows[:, 3].std()),
        std_xy=float(np.sqrt(np.mean(xy * xy))),
    )


def standardize(windows: Sequence[SequenceWindow], stats: StandardizationStats) -> list[SequenceWindow]:
    out = []
    for w in windows:
        rows = np.zeros_like(w.rows)
        real = w.rows[w.mask]
        rows[w.mask, 0:2] = real[:, 0:2] / stats.std_xy
        rows[w.mask, 2] = (real[:, 2] - stats.mean_dt) / stats.std_dt
        rows[w.mask, 3] = (real[:, 3] - stats.mean_v) / stats.std_v
        out.append(replace(w, rows=rows))
    return out


def destandardize(windows: Sequence[SequenceWindow], stats: StandardizationStats) -> list[SequenceWindow]:
    out = []
    for w in windows:
        rows = np.zeros_like(w.rows)
        real = w.rows[w.mask]
        rows[w.mask, 0:2] = real[:, 0:2] * stats.std_xy
        rows[w.mask, 2] = real[:, 2] * stats.std_dt + stats.mean_dt
        rows[w.mask, 3] = real[:, 3] * stats.std_v + stats.mean_v
        out.append(replace(w, rows=rows))
    return out


def window_seed(seed: int, origin: tuple[str, int], epoch: int = 0) -> list[int]:
    """Per-window seed material, independent of processing order."""
    user, start = origin
    return [int(seed), int(epoch), zlib.crc32(str(user).encode("utf-8")), int(start)]


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def random_rotate(window: SequenceWindow, rng_seed=None, angle: float | None = None) -> SequenceWindow:
    """Rotate positions (and the next-step displacement) about the origin.

    The angle is drawn uniformly from [0, 2*pi) using ``rng_seed`` unless given.
    """
    if angle is None:
        angle = float(np.random.default_rng(rng_seed).uniform(0.0, 2 * math.pi))
    rot = rotation_matrix(angle)
    rows = window.rows.copy()
    rows[:, :2] = rows[:, :2] @ rot.T
    rows[~window.mask, :2] = 0.0
    next_step = window.next_step
    if next_step is not None:
        next_step = next_step.copy()
        next_step[:2] = rot @ next_step[:2]
    return replace(window, rows=rows, next_step=next_step)


# -- segments ---------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    class_id: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise TrajectoryError(f"segment start {self.t_start} must precede end {self.t_end}")


@dataclass
class SegmentationResult:
    segments: list[Segment] = field(default_factory=list)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def stay_regions(self) -> list[Segment]:
        return [s for s in self.segments if s.class_id == STAY]

    def violations(self, t_first: float | None = None) -> list[str]:
        """Return every broken segmentation constraint (empty when valid)."""
        problems = []
        segs = self.segments
        if not segs:
            return problems
        if t_first is not None and segs[0].t_start != t_first:
            problems.append("first segment does not start at the first timestamp")
        if segs[-1].t_end != math.inf:
            problems.append("last segment does not extend to infinity")
        for a, b in zip(segs, segs[1:]):
            if a.t_end != b.t_start:
                problems.append(f"gap or overlap between {a} and {b}")
            if a.class_id == b.class_id:
                problems.append(f"consecutive segments share class {a.class_id}")
        for s in segs:
            if not s.t_start < s.t_end:
                problems.append(f"empty segment {s}")
        return problems

    def point_classes(self, timestamps) -> np.ndarray:
        """Class of each timestamp, i.e. of the segment with ``t_start <= t < t_end``."""
        timestamps = np.asarray(timestamps, dtype=float)
        if not self.segments:
            return np.zeros(len(timestamps), dtype=int)
        starts = np.array([s.t_start for s in self.segments])
        classes = np.array([s.class_id for s in self.segments])
        idx = np.searchsorted(starts, timestamps, side="right") - 1
        return classes[np.clip(idx, 0, None)]


def segments_from_classes(timestamps, classes) -> SegmentationResult:
    """Group maximal runs of equal per-point classes into segments."""
    timestamps = np.asarray(timestamps, dtype=float)
    classes = np.asarray(classes)
    if len(timestamps) != len(classes):
        raise TrajectoryError("timestamps and classes must align")
    if len(timestamps) == 0:
        return SegmentationResult([])
    change = np.flatnonzero(classes[1:] != classes[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = [timestamps[i] for i in change] + [math.inf]
    return SegmentationResult(
        [Segment(float(timestamps[s]), float(e), int(classes[s])) for s, e in zip(starts, ends)]
    )


def group_segments(timestamps, probs, threshold: float = 0.5) -> SegmentationResult:
    """Segments from per-point stay probabilities; a tie at ``threshold`` is a stay."""
    probs = np.asarray(probs, dtype=float)
    return segments_from_classes(timestamps, np.where(probs >= threshold, STAY, NON_STAY))


# -- persistence ------------------------------------------------------------


def write_trajectories(path, trajectories: Iterable[Trajectory]) -> None:
    """Tab-separated records ``user_id, t, lat, lon, x, y``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tr in trajectories:
            for i in range(len(tr)):
                fh.write(
                    f"{tr.user_id}\t{tr.t[i]:.3f}\t{tr.lat[i]:.7f}\t{tr.lon[i]:.7f}\t{tr.x[i]:.3f}\t{tr.y[i]:.3f}\n"
                )


def read_trajectories(path, max_gap: float = DEFAULT_MAX_GAP) -> list[Trajectory]:
    """Read a cleaned-trajectory file, re-splitting each user's points at long gaps."""
    users: dict[str, list[list[float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 6:
                continue
            users.setdefault(parts[0], []).append([float(v) for v in parts[1:]])
    out = []
    for user, rows in users.items():
        arr = np.array(rows)
        # points of one user may come from several cleaned pieces; re-derive them
        cuts = np.flatnonzero((np.diff(arr[:, 0]) > max_gap) | (np.diff(arr[:, 0]) <= 0)) + 1
        for part in np.split(arr, cuts):
            out.append(Trajectory(user, part[:, 0], part[:, 3], part[:, 4], part[:, 1], part[:, 2]))
    return out


def write_point_column(path, trajectories: Iterable[Trajectory], column: str) -> None:
    """Sidecar file aligned with :func:`write_trajectories`: ``user_id, t, value``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tr in trajectories:
            values = getattr(tr, column)
            for i in range(len(tr)):
                v = None if values is None else values[i]
                if v is None or (isinstance(v, float) and math.isnan(v)):
                    text = ""
                elif column == "labels":
                    text = str(int(v))
                else:
                    text = str(v)
                fh.write(f"{tr.user_id}\t{tr.t[i]:.3f}\t{text}\n")


def attach_point_column(trajectories: list[Trajectory], path, column: str) -> None:
    """Inverse of :func:`write_point_column`; rows must align with the trajectories."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            values.append(parts[2] if len(parts) > 2 else "")
    total = sum(len(tr) for tr in trajectories)
    if len(values) != total:
        raise TrajectoryError(f"{path}: {len(values)} rows, expected {total}")
    pos = 0
    for tr in trajectories:
        chunk_values = values[pos : pos + len(tr)]
        pos += len(tr)
        if column == "labels":
            tr.labels = np.array([float(v) if v else np.nan for v in chunk_values])
        else:
            tr.modes = np.array([v if v else None for v in chunk_values], dtype=object)


def ensure_path(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p
