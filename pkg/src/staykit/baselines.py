"""Classical stay-region extractors and their cross-validated parameter search."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .metrics import pointwise_metrics, split_by_participant
from .trajectory import NON_STAY, STAY, SegmentationResult, Trajectory, segments_from_classes


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class KangParams:
    d_max: float
    t_min: float

    def __post_init__(self):
        if self.d_max <= 0 or self.t_min <= 0:
            raise BaselineError("d_max and t_min must be positive")


@dataclass(frozen=True)
class CbsmotParams:
    area_radius: float
    min_time: float

    def __post_init__(self):
        if self.area_radius <= 0 or self.min_time <= 0:
            raise BaselineError("area_radius and min_time must be positive")


@dataclass(frozen=True)
class DstarParams:
    radius: float
    min_time: float
    outlier_tolerance: int = 1
    merge_gap: float = 0.0

    def __post_init__(self):
        if self.radius <= 0 or self.min_time <= 0:
            raise BaselineError("radius and min_time must be positive")
        if self.outlier_tolerance < 0 or self.merge_gap < 0:
            raise BaselineError("outlier_tolerance and merge_gap must be non-negative")


def params_text(params) -> str:
    return ",".join(f"{k}={v:g}" for k, v in asdict(params).items())


# -- Kang: incremental centroid clustering ------------------------------------


def kang_stay_runs(traj: Trajectory, params: KangParams) -> list[tuple[int, int]]:
    """Inclusive index ranges of the stay clusters found by centroid clustering."""
    n = len(traj)
    runs = []
    if n == 0:
        return runs
    x, y, t = traj.x, traj.y, traj.t
    start = 0
    sx, sy, count = x[0], y[0], 1
    for i in range(1, n + 1):
        if i < n and math.hypot(x[i] - sx / count, y[i] - sy / count) <= params.d_max:
            sx += x[i]
            sy += y[i]
            count += 1
            continue
        if t[i - 1] - t[start] >= params.t_min:
            runs.append((start, i - 1))
        if i < n:
            start, sx, sy, count = i, x[i], y[i], 1
    return runs


def _classes_from_runs(n, runs):
    classes = np.full(n, NON_STAY)
    for a, b in runs:
        classes[a : b + 1] = STAY
    return classes


def kang_extract(traj: Trajectory, params: KangParams) -> SegmentationResult:
    return segments_from_classes(traj.t, _classes_from_runs(len(traj), kang_stay_runs(traj, params)))


# -- density along the trajectory -------------------------------------------------


def _neighbourhood(x, y, i, radius, tolerance):
    """First and last index of the consecutive neighbourhood of point ``i``.

    Scans both directions; up to ``tolerance`` consecutive points farther than
    ``radius`` may be skipped, the neighbourhood ends at the last point inside.
    """
    n = len(x)
    bounds = []
    for step in (-1, 1):
        last = i
        misses = 0
        j = i + step
        while 0 <= j < n:
            if math.hypot(x[j] - x[i], y[j] - y[i]) <= radius:
                last = j
                misses = 0
            else:
                misses += 1
                if misses > tolerance:
                    break
            j += step
        bounds.append(last)
    return bounds[0], bounds[1]


def _merge_intervals(intervals):
    merged = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [tuple(m) for m in merged]


def cbsmot_stay_runs(traj: Trajectory, params: CbsmotParams) -> list[tuple[int, int]]:
    x, y, t = traj.x, traj.y, traj.t
    n = len(traj)
    core = []
    for i in range(n):
        lo, hi = i, i
        while lo > 0 and math.hypot(x[lo - 1] - x[i], y[lo - 1] - y[i]) <= params.area_radius:
            lo -= 1
        while hi < n - 1 and math.hypot(x[hi + 1] - x[i], y[hi + 1] - y[i]) <= params.area_radius:
            hi += 1
        if t[hi] - t[lo] >= params.min_time:
            core.append((lo, hi))
    return [(a, b) for a, b in _merge_intervals(core) if t[b] - t[a] >= params.min_time]


def cbsmot_extract(traj: Trajectory, params: CbsmotParams) -> SegmentationResult:
    """Stays are maximal runs of consecutive points reachable from slow core points."""
    return segments_from_classes(traj.t, _classes_from_runs(len(traj), cbsmot_stay_runs(traj, params)))


def dstar_stay_runs(traj: Trajectory, params: DstarParams) -> list[tuple[int, int]]:
    x, y, t = traj.x, traj.y, traj.t
    core = []
    for i in range(len(traj)):
        lo, hi = _neighbourhood(x, y, i, params.radius, params.outlier_tolerance)
        if t[hi] - t[lo] >= params.min_time:
            core.append((lo, hi))
    clusters = _merge_intervals(core)
    merged = []
    for a, b in clusters:
        if merged and t[a] - t[merged[-1][1]] <= params.merge_gap:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged if t[b] - t[a] >= params.min_time]


def dstar_extract(traj: Trajectory, params: DstarParams) -> SegmentationResult:
    """Density clustering along the trajectory that tolerates short outlier bursts.

    Skipped outliers inside a cluster are absorbed into the stay; clusters
    separated by at most ``merge_gap`` seconds are joined.
    """
    return segments_from_classes(traj.t, _classes_from_runs(len(traj), dstar_stay_runs(traj, params)))


ALGORITHMS: dict[str, tuple[Callable, type]] = {
    "kang": (kang_extract, KangParams),
    "cbsmot": (cbsmot_extract, CbsmotParams),
    "dstar": (dstar_extract, DstarParams),
}

DEFAULT_GRIDS = {
    "kang": {"d_max": [25.0, 50.0, 100.0], "t_min": [180.0, 300.0, 600.0]},
    "cbsmot": {"area_radius": [25.0, 50.0, 100.0], "min_time": [180.0, 300.0, 600.0]},
}

DEFAULT_DSTAR_RANGES = {
    "radius": (20.0, 150.0),
    "min_time": (120.0, 900.0),
    "outlier_tolerance": (0, 3),
    "merge_gap": (0.0, 600.0),
}


def grid_candidates(algorithm: str, grid: dict | None = None) -> list:
    grid = DEFAULT_GRIDS[algorithm] if grid is None else grid
    cls = ALGORITHMS[algorithm][1]
    keys = sorted(grid)
    return [cls(**dict(zip(keys, combo))) for combo in itertools.product(*(grid[k] for k in keys))]


def random_candidates(count: int = 10, seed: int = 0, ranges: dict | None = None) -> list[DstarParams]:
    """``count`` D-Star constellations drawn uniformly from ``ranges``."""
    ranges = DEFAULT_DSTAR_RANGES if ranges is None else ranges
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        lo, hi = ranges["outlier_tolerance"]
        out.append(
            DstarParams(
                radius=float(rng.uniform(*ranges["radius"])),
                min_time=float(rng.uniform(*ranges["min_time"])),
                outlier_tolerance=int(rng.integers(lo, hi + 1)),
                merge_gap=float(rng.uniform(*ranges["merge_gap"])),
            )
        )
    return out


def predict_classes(algorithm: str, params, trajectories: Sequence[Trajectory]) -> list[np.ndarray]:
    extract = ALGORITHMS[algorithm][0]
    return [extract(tr, params).point_classes(tr.t) for tr in trajectories]


def _labelled(trajectories, predictions):
    preds, labels = [], []
    for tr, p in zip(trajectories, predictions):
        sel = np.isfinite(tr.labels)
        preds.append(p[sel])
        labels.append(tr.labels[sel])
    return np.concatenate(preds).astype(float), np.concatenate(labels).astype(int)


@dataclass
class SearchRow:
    algorithm: str
    params: object
    fold: int
    f1: float
    precision: float | None
    recall: float
    accuracy: float


@dataclass
class SearchResult:
    algorithm: str
    best_params: object
    rows: list
    selected: dict
    test_predictions: list

    def table(self) -> str:
        """Tab-separated ``algorithm, params, fold, F1, precision, recall, accuracy``."""
        head = "algorithm\tparams\tfold\tF1\tprecision\trecall\taccuracy\n"
        body = "".join(
            f"{r.algorithm}\t{params_text(r.params)}\t{r.fold}\t{r.f1:.6f}\t"
            f"{'-' if r.precision is None else f'{r.precision:.6f}'}\t{r.recall:.6f}\t{r.accuracy:.6f}\n"
            for r in self.rows
        )
        return head + body


def hyperparameter_search(
    algorithm: str,
    trajectories: Sequence[Trajectory],
    candidates: Sequence | None = None,
    folds: int = 5,
    seed: int = 0,
    assignment: dict | None = None,
) -> SearchResult:
    """Participant-split cross-validated parameter selection by non-stay F1.

    Every candidate is scored on every fold. For each test fold the candidate
    with the best F1 on the remaining folds is applied to it, and those test
    predictions are returned. ``best_params`` maximises the mean per-fold F1.
    """
    if algorithm not in ALGORITHMS:
        raise BaselineError(f"unknown algorithm {algorithm!r}")
    if candidates is None:
        candidates = random_candidates(seed=seed) if algorithm == "dstar" else grid_candidates(algorithm)
    candidates = list(candidates)
    if not candidates:
        raise BaselineError("no candidate parameters")
    trajectories = [tr for tr in trajectories if tr.labels is not None]
    if assignment is None:
        counts: dict[str, int] = {}
        for tr in trajectories:
            counts[tr.user_id] = counts.get(tr.user_id, 0) + int(np.isfinite(tr.labels).sum())
        assignment = split_by_participant(counts, folds, seed)
    fold_of = [assignment[tr.user_id] for tr in trajectories]

    preds = [predict_classes(algorithm, c, trajectories) for c in candidates]
    rows = []
    scores = np.zeros((len(candidates), folds))
    for ci, cand in enumerate(candidates):
        for k in range(folds):
            sel = [i for i, f in enumerate(fold_of) if f == k]
            p, y = _labelled([trajectories[i] for i in sel], [preds[ci][i] for i in sel])
            if len(y) == 0:
                continue
            m = pointwise_metrics(p, y)
            scores[ci, k] = m.f1
            rows.append(SearchRow(algorithm, cand, k, m.f1, m.precision, m.recall, m.accuracy))

    selected = {}
    test_predictions = [None] * len(trajectories)
    for k in range(folds):
        train_sel = [i for i, f in enumerate(fold_of) if f != k]
        best, best_f1 = 0, -1.0
        for ci in range(len(candidates)):
            p, y = _labelled([trajectories[i] for i in train_sel], [preds[ci][i] for i in train_sel])
            f1 = pointwise_metrics(p, y).f1 if len(y) else 0.0
            if f1 > best_f1:
                best, best_f1 = ci, f1
        selected[k] = candidates[best]
        for i, f in enumerate(fold_of):
            if f == k:
                test_predictions[i] = preds[best][i]
    best_params = candidates[int(np.argmax(scores.mean(axis=1)))]
    return SearchResult(algorithm, best_params, rows, selected, test_predictions)
