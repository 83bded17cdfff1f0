"""GeoLife and ExtraSensory readers, ES stay-label derivation and interpolation."""
from __future__ import annotations

import calendar
import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .projection import auto_zone
from .trajectory import NON_STAY, STAY, Trajectory, compute_features, sort_and_dedupe

log = logging.getLogger(__name__)

PLT_HEADER_LINES = 6
EXCEL_EPOCH_OFFSET_DAYS = 25569  # 1899-12-30 -> 1970-01-01

STAY_CLASS = "stay"
NON_STAY_CLASS = "non-stay"
IGNORE_CLASS = "ignore"


class IngestError(ValueError):
    pass


@dataclass
class IngestReport:
    files: int = 0
    lines: int = 0
    malformed: int = 0
    day_mismatches: int = 0
    duplicates: int = 0
    per_user: dict = field(default_factory=dict)

    def merge(self, other: "IngestReport") -> None:
        self.files += other.files
        self.lines += other.lines
        self.malformed += other.malformed
        self.day_mismatches += other.day_mismatches
        self.duplicates += other.duplicates
        self.per_user.update(other.per_user)


# -- GeoLife ------------------------------------------------------------------


def _epoch(date: str, time: str) -> float:
    y, mo, d = (int(v) for v in re.split(r"[-/]", date.strip()))
    h, mi, s = time.strip().split(":")
    return calendar.timegm((y, mo, d, int(h), int(mi), 0, 0, 0, 0)) + float(s)


def parse_plt_line(line: str):
    """``(lat, lon, epoch_seconds, days_field)`` of one PLT data row."""
    parts = line.strip().split(",")
    if len(parts) < 7:
        raise IngestError(f"expected 7 fields, got {len(parts)}")
    lat, lon = float(parts[0]), float(parts[1])
    if not (-90 <= lat <= 90 and -180 <= lon <= 180):
        raise IngestError("coordinates out of range")
    return lat, lon, _epoch(parts[5], parts[6]), float(parts[4])


def read_plt(path, report: IngestReport | None = None) -> np.ndarray:
    """``(k, 3)`` array of ``lat, lon, t`` from one PLT file; bad rows are counted and skipped."""
    report = report if report is not None else IngestReport()
    rows = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for k, line in enumerate(fh):
            if k < PLT_HEADER_LINES or not line.strip():
                continue
            report.lines += 1
            try:
                lat, lon, t, days = parse_plt_line(line)
            except (IngestError, ValueError):
                report.malformed += 1
                continue
            if abs((days - EXCEL_EPOCH_OFFSET_DAYS) * 86400 - t) > 1.0:
                report.day_mismatches += 1
            rows.append((lat, lon, t))
    report.files += 1
    return np.array(rows, dtype=float).reshape(-1, 3)


def read_mode_labels(path) -> list[tuple[float, float, str]]:
    """``(start, end, mode)`` ranges from a GeoLife ``labels.txt``."""
    out = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 5:
                continue
            try:
                start = _epoch(parts[0], parts[1])
                end = _epoch(parts[2], parts[3])
            except ValueError:
                continue
            out.append((start, end, parts[4]))
    return sorted(out)


def annotate_modes(t, ranges: Sequence[tuple[float, float, str]]) -> np.ndarray:
    """Mode of the range containing each timestamp (inclusive), ``None`` elsewhere."""
    t = np.asarray(t, dtype=float)
    modes = np.full(len(t), None, dtype=object)
    if not ranges:
        return modes
    starts = np.array([r[0] for r in ranges])
    ends = np.array([r[1] for r in ranges])
    idx = np.searchsorted(starts, t, side="right") - 1
    ok = idx >= 0
    ok[ok] &= t[ok] <= ends[idx[ok]]
    for i in np.flatnonzero(ok):
        modes[i] = ranges[idx[i]][2]
    return modes


def _geolife_data_dir(root: Path) -> Path:
    return root / "Data" if (root / "Data").is_dir() else root


def parse_geolife(root, zone=None, report: IngestReport | None = None) -> list[Trajectory]:
    """One trajectory per user from ``<root>/[Data/]<user>/Trajectory/*.plt``.

    Points are sorted, exact duplicate timestamps dropped, and mode annotations
    joined from ``labels.txt`` when the user has one.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"GeoLife root {root} is not a directory")
    report = report if report is not None else IngestReport()
    data_dir = _geolife_data_dir(root)
    users = sorted(p for p in data_dir.iterdir() if p.is_dir())
    arrays: dict[str, np.ndarray] = {}
    modes: dict[str, list] = {}
    for user_dir in users:
        plt_dir = user_dir / "Trajectory"
        files = sorted(plt_dir.glob("*.plt")) if plt_dir.is_dir() else []
        parts = [read_plt(f, report) for f in files]
        parts = [p for p in parts if len(p)]
        if not parts:
            continue
        arr = np.concatenate(parts)
        keep = sort_and_dedupe(arr[:, 2])
        report.duplicates += len(arr) - len(keep)
        arrays[user_dir.name] = arr[keep]
        labels_file = user_dir / "labels.txt"
        modes[user_dir.name] = read_mode_labels(labels_file) if labels_file.exists() else []
    if zone is None and arrays:
        allp = np.concatenate(list(arrays.values()))
        zone = auto_zone(allp[:, 0], allp[:, 1])
    out = []
    for user, arr in arrays.items():
        ann = annotate_modes(arr[:, 2], modes[user]) if modes[user] else None
        out.append(Trajectory.from_latlon(user, arr[:, 2], arr[:, 0], arr[:, 1], zone, modes=ann))
        report.per_user[user] = len(arr)
    return out


# -- ExtraSensory -----------------------------------------------------------------


@dataclass
class EsRecord:
    user_id: str
    timestamp: float
    lat: float
    lon: float
    activities: frozenset


def normalize_activity(tag: str) -> str:
    """``'label:FIX_walking'`` -> ``'walking'``; ``'WATCHING_TV'`` -> ``'watching tv'``."""
    text = str(tag).strip()
    if text.lower().startswith("label:"):
        text = text[6:]
    text = re.sub(r"[_\-]+", " ", text.lower())
    text = re.sub(r"\s+", " ", text).strip()
    for prefix in ("fix ", "or ", "loc "):
        if text.startswith(prefix):
            text = text[len(prefix):]
            break
    return text


def load_activity_mapping(path=None) -> dict[str, str]:
    """Activity mapping from a rule file (``tag<TAB>class`` per line); default mapping if no path."""
    if path is None:
        text = resources.files("staykit").joinpath("data/es_activity_mapping.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    mapping = {}
    for k, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in re.split(r"\t|,", line) if p.strip()]
        if len(parts) != 2:
            raise IngestError(f"mapping line {k}: expected 'tag<TAB>class'")
        cls = parts[1].lower()
        if cls not in (STAY_CLASS, NON_STAY_CLASS, IGNORE_CLASS):
            raise IngestError(f"mapping line {k}: unknown class {parts[1]!r}")
        mapping[normalize_activity(parts[0])] = cls
    return mapping


def derive_es_labels(records: Sequence[EsRecord], mapping: Mapping[str, str] | None = None) -> np.ndarray:
    """Stay label (1), non-stay label (0) or NaN per record.

    A record is labelled only when all of its mapped (non-ignored) activities agree.
    """
    mapping = load_activity_mapping() if mapping is None else mapping
    out = np.full(len(records), np.nan)
    for i, rec in enumerate(records):
        classes = {mapping.get(normalize_activity(a), IGNORE_CLASS) for a in rec.activities} - {IGNORE_CLASS}
        if classes == {STAY_CLASS}:
            out[i] = STAY
        elif classes == {NON_STAY_CLASS}:
            out[i] = NON_STAY
    return out


def _read_table(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, compression="infer")


def parse_extrasensory(root, report: IngestReport | None = None) -> list[EsRecord]:
    """Records from per-user ``<uuid>.features_labels.csv[.gz]`` tables.

    Positions come from ``<uuid>.absolute_locations.csv[.gz]`` (anywhere under
    ``root``) or, failing that, from latitude/longitude columns of the feature
    table. Only location and ``label:*`` columns are read.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"ExtraSensory root {root} is not a directory")
    report = report if report is not None else IngestReport()
    label_files = sorted(root.rglob("*.features_labels.csv*"))
    loc_files = {p.name.split(".")[0]: p for p in root.rglob("*.absolute_locations.csv*")}
    records = []
    for path in label_files:
        uuid = path.name.split(".")[0]
        header = pd.read_csv(path, compression="infer", nrows=0).columns
        label_cols = [c for c in header if c.startswith("label:")]
        lat_cols = [c for c in header if c.lower() in ("latitude", "location:raw_latitude", "lat")]
        lon_cols = [c for c in header if c.lower() in ("longitude", "location:raw_longitude", "lon")]
        usecols = ["timestamp"] + label_cols + lat_cols[:1] + lon_cols[:1]
        table = pd.read_csv(path, compression="infer", usecols=usecols)
        report.files += 1
        report.lines += len(table)
        if uuid in loc_files:
            loc = _read_table(loc_files[uuid])
            loc.columns = [c.strip().lower() for c in loc.columns]
            table = table.merge(loc[["timestamp", "latitude", "longitude"]], on="timestamp", how="inner")
            lat_col, lon_col = "latitude", "longitude"
        elif lat_cols and lon_cols:
            lat_col, lon_col = lat_cols[0], lon_cols[0]
        else:
            log.warning("no location data for %s", uuid)
            continue
        lat = table[lat_col].to_numpy(dtype=float)
        lon = table[lon_col].to_numpy(dtype=float)
        ts = table["timestamp"].to_numpy(dtype=float)
        labels = table[label_cols].to_numpy(dtype=float) if label_cols else np.zeros((len(table), 0))
        count = 0
        for i in range(len(table)):
            if not (math.isfinite(lat[i]) and math.isfinite(lon[i]) and abs(lat[i]) <= 90 and abs(lon[i]) <= 180):
                report.malformed += 1
                continue
            acts = frozenset(label_cols[j][6:] for j in np.flatnonzero(labels[i] == 1))
            records.append(EsRecord(uuid, float(ts[i]), float(lat[i]), float(lon[i]), acts))
            count += 1
        report.per_user[uuid] = count
    return records


def es_trajectories(records: Sequence[EsRecord], labels, zone=None) -> list[Trajectory]:
    """Per-user trajectories carrying the derived labels."""
    labels = np.asarray(labels, dtype=float)
    by_user: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        by_user.setdefault(rec.user_id, []).append(i)
    if zone is None and records:
        zone = auto_zone([r.lat for r in records], [r.lon for r in records])
    out = []
    for user in sorted(by_user):
        idx = np.array(by_user[user])
        t = np.array([records[i].timestamp for i in idx])
        keep = idx[sort_and_dedupe(t)]
        out.append(
            Trajectory.from_latlon(
                user,
                [records[i].timestamp for i in keep],
                [records[i].lat for i in keep],
                [records[i].lon for i in keep],
                zone,
                labels=labels[keep],
            )
        )
    return out


def point_velocities(traj: Trajectory) -> np.ndarray:
    if len(traj) < 2:
        return np.zeros(len(traj))
    return compute_features(traj)[:, 3]


def suspicious_stay_threshold(trajectories: Sequence[Trajectory]) -> float | None:
    """Mean velocity over all non-stay labelled points, or ``None`` without any."""
    vs = [point_velocities(tr)[tr.labels == NON_STAY] for tr in trajectories if tr.labels is not None]
    vs = np.concatenate(vs) if vs else np.zeros(0)
    return float(vs.mean()) if len(vs) else None


def remove_suspicious_stays(trajectories: Sequence[Trajectory]) -> list[Trajectory]:
    """Unlabel stays moving faster than the average non-stay point."""
    threshold = suspicious_stay_threshold(trajectories)
    if threshold is None:
        log.warning("no non-stay labels; suspicious-stay removal skipped")
        return list(trajectories)
    out = []
    for tr in trajectories:
        if tr.labels is None:
            out.append(tr)
            continue
        labels = tr.labels.copy()
        labels[(labels == STAY) & (point_velocities(tr) > threshold)] = np.nan
        out.append(Trajectory(tr.user_id, tr.t, tr.x, tr.y, tr.lat, tr.lon, tr.modes, labels))
    return out


def interpolate(traj: Trajectory, rate: float = 0.5) -> tuple[Trajectory, np.ndarray]:
    """Insert linearly interpolated points every ``1/rate`` seconds between neighbours.

    Original points are kept unchanged; the returned index map gives the
    position of each original point in the dense trajectory.
    """
    step = 1.0 / rate
    n = len(traj)
    if n < 2:
        return traj, np.arange(n)
    t_parts, src, frac = [], [], []
    for i in range(n - 1):
        gap = traj.t[i + 1] - traj.t[i]
        k = int(math.ceil(gap / step)) - 1
        offs = np.arange(0, k + 1) * step
        t_parts.append(traj.t[i] + offs)
        src.append(np.full(k + 1, i))
        frac.append(offs / gap)
    t_parts.append(traj.t[-1:])
    src.append(np.array([n - 1]))
    frac.append(np.zeros(1))
    t = np.concatenate(t_parts)
    a = np.concatenate(src)
    f = np.concatenate(frac)
    b = np.minimum(a + 1, n - 1)

    def lerp(col):
        return col[a] + (col[b] - col[a]) * f

    original = f == 0
    index_map = np.flatnonzero(original)
    labels = None
    if traj.labels is not None:
        labels = np.full(len(t), np.nan)
        labels[index_map] = traj.labels
    modes = None
    if traj.modes is not None:
        modes = np.full(len(t), None, dtype=object)
        modes[index_map] = traj.modes
    x, y = lerp(traj.x), lerp(traj.y)
    x[index_map], y[index_map] = traj.x, traj.y
    dense = Trajectory(traj.user_id, t, x, y, lerp(traj.lat), lerp(traj.lon), modes, labels)
    return dense, index_map


# -- transportation-mode classes ----------------------------------------------

MODE_GROUPS = {
    "walk": "walk", "walking": "walk", "run": "walk", "running": "walk",
    "bike": "bike", "biking": "bike",
    "bus": "bus",
    "car": "car", "taxi": "car",
    "train": "train", "subway": "train",
}


def group_mode(mode, names: Sequence[str] = ("walk", "bike", "bus", "car", "train")) -> int:
    """Class index of an annotated mode, or -1 for modes outside the grouping."""
    if mode is None or (isinstance(mode, float) and math.isnan(mode)):
        return -1
    group = MODE_GROUPS.get(str(mode).strip().lower())
    return names.index(group) if group in names else -1


def mode_classes(traj: Trajectory) -> np.ndarray:
    if traj.modes is None:
        return np.full(len(traj), -1)
    return np.array([group_mode(m) for m in traj.modes], dtype=int)
