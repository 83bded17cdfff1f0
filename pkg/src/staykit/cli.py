"""Command line entry point: ``staykit <command> --config run.yaml``.

Every command reads the artifacts of the previous ones from the output
directory, so the usual order is ingest, weaklabel, train, finetune,
baseline, evaluate (tmd only needs ingest).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import ALGORITHMS, BaselineError, grid_candidates, hyperparameter_search, random_candidates
from .config import ConfigValidationError, PipelineConfig, dump_config, load_config
from .ingest import (
    IngestError,
    IngestReport,
    derive_es_labels,
    es_trajectories,
    interpolate,
    load_activity_mapping,
    mode_classes,
    parse_extrasensory,
    parse_geolife,
    remove_suspicious_stays,
)
from .metrics import (
    MetricsError,
    ResultRow,
    evaluate_row,
    format_table,
    rows_to_tsv,
    split_by_participant,
    split_by_sequence,
    weighted_f1,
)
from .model import EncoderConfig, LossConfig, StayModel, load_checkpoint, save_checkpoint
from .model.checkpoint import CheckpointError
from .model.heads import MODE_NAMES, NUM_MODES
from .model.training import (
    TrainConfig,
    TrainingError,
    build_dataset,
    predict,
    predict_points,
    set_deterministic,
    train,
    trajectory_windows,
)
from .osm import OsmError, features_from_geojson, merge_feature_collections
from .overpass import OverpassClient, default_cache_dir
from .projection import UtmZone, auto_zone
from .trajectory import (
    Trajectory,
    StatsError,
    TrajectoryError,
    attach_point_column,
    clean_and_split,
    read_trajectories,
    write_point_column,
    write_trajectories,
)
from .weak import format_mass_table, label_trajectory, read_weak_labels, weight_masses, write_weak_labels

log = logging.getLogger("staykit")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2

INPUT_ERRORS = (
    BaselineError,
    CheckpointError,
    ConfigValidationError,
    FileNotFoundError,
    IngestError,
    MetricsError,
    OsmError,
    StatsError,
    TrajectoryError,
)


class InputError(Exception):
    """Bad or missing input; reported with exit code 2."""


def _dir(cfg: PipelineConfig, name: str) -> Path:
    path = Path(cfg.output_dir) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise InputError(f"{path} not found; {hint}")
    return path


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _encoder_config(cfg: PipelineConfig) -> EncoderConfig:
    m = cfg.model
    return EncoderConfig(m.d_model, m.num_layers, m.num_heads, m.d_ff, m.dropout, cfg.seed)


def _train_config(cfg: PipelineConfig, section, objective: str, deterministic: bool, **kw) -> TrainConfig:
    values = dict(
        objective=objective,
        epochs=section.epochs,
        lr=section.lr,
        weight_decay=section.weight_decay,
        batch_size=section.batch_size,
        seed=cfg.seed,
        ssl=section.ssl,
        rotate=section.rotate,
        deterministic=deterministic,
    )
    values.update(kw)
    return TrainConfig(**values)


# -- ingest -----------------------------------------------------------------------------


def _clean(trajs, cfg: PipelineConfig):
    pieces, dropped = [], 0
    for tr in trajs:
        for piece in clean_and_split(tr, cfg.data.max_gap, cfg.data.max_speed):
            if len(piece) < 2:
                dropped += len(piece)
                continue
            pieces.append(piece)
    return pieces, dropped


def _zone(cfg: PipelineConfig):
    return None if cfg.data.utm_zone is None else UtmZone.parse(cfg.data.utm_zone)


def _report_dict(report: IngestReport, read: int, pieces, dropped: int, zone) -> dict:
    kept = sum(len(p) for p in pieces)
    dts = np.concatenate([np.diff(p.t) for p in pieces]) if pieces else np.zeros(0)
    per_user: dict[str, dict] = {}
    for user, n in sorted(report.per_user.items()):
        per_user[user] = {"read": int(n), "kept": 0, "pieces": 0}
    for p in pieces:
        entry = per_user.setdefault(p.user_id, {"read": 0, "kept": 0, "pieces": 0})
        entry["kept"] += len(p)
        entry["pieces"] += 1
    return {
        "files": report.files,
        "lines": report.lines,
        "malformed_lines": report.malformed,
        "day_field_mismatches": report.day_mismatches,
        "duplicate_timestamps": report.duplicates,
        "points_read": int(read),
        "points_kept": int(kept),
        "points_dropped": int(read - kept),
        "short_piece_points": int(dropped),
        "trajectories": len(pieces),
        "sampling_interval_median_s": float(np.median(dts)) if len(dts) else None,
        "sampling_interval_p90_s": float(np.percentile(dts, 90)) if len(dts) else None,
        "utm_zone": None if zone is None else str(zone),
        "users": per_user,
    }


def _check_root(path, name):
    root = Path(path)
    if not root.is_dir():
        raise InputError(f"{name} {root} is not a readable directory")
    return root


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    out = _dir(cfg, "ingest")
    wanted = args.dataset
    if wanted == "geolife" and cfg.data.geolife_root is None:
        raise InputError("data.geolife_root is not set")
    if wanted == "es" and cfg.data.es_root is None:
        raise InputError("data.es_root is not set")
    if cfg.data.geolife_root is None and cfg.data.es_root is None:
        raise InputError("set data.geolife_root and/or data.es_root")
    summary = {}
    if wanted in ("geolife", "all") and cfg.data.geolife_root is not None:
        root = _check_root(cfg.data.geolife_root, "data.geolife_root")
        report = IngestReport()
        trajs = parse_geolife(root, _zone(cfg), report)
        zone = _zone(cfg) or _traj_zone(trajs)
        pieces, dropped = _clean(trajs, cfg)
        write_trajectories(out / "geolife.tsv", pieces)
        write_point_column(out / "geolife_modes.tsv", pieces, "modes")
        rep = _report_dict(report, sum(len(t) for t in trajs), pieces, dropped, zone)
        rep["annotated_points"] = int(sum(sum(m is not None for m in p.modes) for p in pieces if p.modes is not None))
        _write(out / "geolife_report.json", _json(rep))
        summary["geolife"] = rep
        log.info("GeoLife: %d points in %d trajectories, %d malformed lines",
                 rep["points_kept"], rep["trajectories"], rep["malformed_lines"])
    if wanted in ("es", "all") and cfg.data.es_root is not None:
        root = _check_root(cfg.data.es_root, "data.es_root")
        report = IngestReport()
        records = parse_extrasensory(root, report)
        mapping = load_activity_mapping(cfg.data.activity_mapping)
        labels = derive_es_labels(records, mapping)
        trajs = es_trajectories(records, labels, _zone(cfg))
        zone = _zone(cfg) or _traj_zone(trajs)
        pieces, dropped = _clean(trajs, cfg)
        before = np.concatenate([p.labels for p in pieces]) if pieces else np.zeros(0)
        pieces = remove_suspicious_stays(pieces)
        after = np.concatenate([p.labels for p in pieces]) if pieces else np.zeros(0)
        write_trajectories(out / "es.tsv", pieces)
        write_point_column(out / "es_labels.tsv", pieces, "labels")
        rep = _report_dict(report, len(records), pieces, dropped, zone)
        rep.update(
            labelled_points=int(np.isfinite(after).sum()),
            stays=int(np.sum(after == 1)),
            non_stays=int(np.sum(after == 0)),
            suspicious_stays_removed=int(np.sum(before == 1) - np.sum(after == 1)),
        )
        _write(out / "es_report.json", _json(rep))
        summary["es"] = rep
        log.info("ES: %d points, %d stays, %d non-stays", rep["points_kept"], rep["stays"], rep["non_stays"])
    print(_json({k: {kk: v for kk, v in rep.items() if kk != "users"} for k, rep in summary.items()}), end="")
    return EXIT_OK


def _traj_zone(trajs):
    lat = np.concatenate([t.lat for t in trajs]) if trajs else np.zeros(0)
    lon = np.concatenate([t.lon for t in trajs]) if trajs else np.zeros(0)
    return auto_zone(lat, lon) if len(lat) else None


def _load_ingested(cfg: PipelineConfig, name: str, column: str | None):
    base = Path(cfg.output_dir) / "ingest"
    path = _require(base / f"{name}.tsv", "run 'staykit ingest' first")
    trajs = read_trajectories(path, cfg.data.max_gap)
    if column is not None:
        side = base / (f"{name}_modes.tsv" if column == "modes" else f"{name}_labels.tsv")
        attach_point_column(trajs, _require(side, "run 'staykit ingest' first"), column)
    report = json.loads(_require(base / f"{name}_report.json", "run 'staykit ingest' first").read_text())
    zone = report.get("utm_zone")
    return trajs, (UtmZone.parse(zone) if zone else None)


# -- weak labels -----------------------------------------------------------------------


def _tiles(trajs, size: float = 0.05):
    keys = set()
    for tr in trajs:
        keys.update(zip(np.floor(tr.lat / size).astype(int).tolist(), np.floor(tr.lon / size).astype(int).tolist()))
    return [(a * size, b * size, (a + 1) * size, (b + 1) * size) for a, b in sorted(keys)]


def _osm_collection(cfg: PipelineConfig, trajs) -> dict:
    if cfg.data.osm_geojson:
        parts = []
        for p in cfg.data.osm_geojson:
            path = Path(p)
            if not path.is_file():
                raise InputError(f"OSM file {path} not found")
            try:
                parts.append(json.loads(path.read_text(encoding="utf-8")))
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}: invalid GeoJSON ({exc})") from exc
        return merge_feature_collections(parts)
    if cfg.data.overpass:
        client = OverpassClient(cfg.data.overpass_url)
        return merge_feature_collections(client.fetch(b) for b in _tiles(trajs))
    raise InputError("no OSM input: set data.osm_geojson or enable data.overpass")


def _content_key(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        data = p if isinstance(p, bytes) else json.dumps(p, sort_keys=True).encode("utf-8")
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    return h.hexdigest()


WEAK_FILES = ("labels.tsv", "summary.txt", "summary.tsv")


def cmd_weaklabel(cfg: PipelineConfig, args) -> int:
    out = _dir(cfg, OUTPUT_DIRS["weaklabel"])
    trajs, zone = _load_ingested(cfg, "geolife", "modes")
    collection = _osm_collection(cfg, trajs)
    base = Path(cfg.output_dir) / "ingest"
    key = _content_key(
        (base / "geolife.tsv").read_bytes(),
        (base / "geolife_modes.tsv").read_bytes(),
        collection,
        {"box_sizes": cfg.labeling.box_sizes, "zone": str(zone), "version": __version__},
    )
    cache = default_cache_dir() / "weak" / key
    if not args.no_cache and all((cache / f).exists() for f in WEAK_FILES):
        log.info("weak labels taken from cache %s", cache)
        for f in WEAK_FILES:
            shutil.copyfile(cache / f, out / f)
        print((out / "summary.txt").read_text(encoding="utf-8"), end="")
        return EXIT_OK

    features = features_from_geojson(collection, zone)
    if len(features) == 0:
        log.warning("no OSM features in the input; only transport annotations carry weight")
    labels = [label_trajectory(tr, features, box_sizes=cfg.labeling.box_sizes) for tr in trajs]
    masses = weight_masses(labels)
    write_weak_labels(out / "labels.tsv", trajs, labels)
    table = format_mass_table(masses)
    _write(out / "summary.txt", table)
    covered = sum(int((lab.w_weak > 0).sum()) for lab in labels)
    total = sum(len(lab) for lab in labels)
    _write(
        out / "summary.tsv",
        "heuristic\tmass\n" + "".join(f"{h}\t{m:.6f}\n" for h, m in masses.items())
        + f"points\t{total}\nweighted_points\t{covered}\n",
    )
    if total and covered == 0:
        log.warning("all weak-label weights are zero")
    try:
        cache.mkdir(parents=True, exist_ok=True)
        for f in WEAK_FILES:
            shutil.copyfile(out / f, cache / f)
    except OSError as exc:
        log.warning("could not write cache %s: %s", cache, exc)
    print(table, end="")
    return EXIT_OK


# -- pre-training ----------------------------------------------------------------------


def cmd_train(cfg: PipelineConfig, args) -> int:
    out = _dir(cfg, "train")
    trajs, _ = _load_ingested(cfg, "geolife", None)
    labels = read_weak_labels(_require(Path(cfg.output_dir) / "weak" / "labels.tsv", "run 'staykit weaklabel' first"), trajs)
    windows = trajectory_windows(trajs, [l.c_weak for l in labels], [l.w_weak for l in labels], cfg.model.seq_len)
    if not windows:
        raise InputError("no trajectory with at least two points to train on")
    data = build_dataset(windows)
    try:
        c_bar = data.label_mean()
        loss_cfg = LossConfig(c_bar, cfg.pretrain.lambda_vel, cfg.pretrain.lambda_ang)
    except (TrainingError, ValueError) as exc:
        raise InputError(f"weak labels unusable for training: {exc}") from exc
    model = StayModel(_encoder_config(cfg))
    tcfg = _train_config(cfg, cfg.pretrain, "weak", args.deterministic)
    history = train(model, data, tcfg, loss_cfg)
    save_checkpoint(
        out / "model.ckpt", model, data.stats, {"c_bar_weak": c_bar},
        {"objective": "weak", "seq_len": cfg.model.seq_len, "windows": len(data)},
    )
    _write(out / "history.tsv", history.to_tsv())
    print(f"pre-trained on {len(data)} windows, final loss {history.losses[-1] if history.losses else float('nan'):.6f}")
    return EXIT_OK


# -- fine-tuning on labelled stays ----------------------------------------------------------


def _participant_folds(trajs, cfg: PipelineConfig) -> dict:
    counts: dict[str, int] = {}
    for tr in trajs:
        counts[tr.user_id] = counts.get(tr.user_id, 0) + int(np.isfinite(tr.labels).sum())
    counts = {u: c for u, c in sorted(counts.items()) if c > 0}
    if len(counts) < cfg.folds:
        raise InputError(f"{len(counts)} labelled participants cannot fill {cfg.folds} folds")
    return split_by_participant(counts, cfg.folds, cfg.seed)


def _prediction_lines(method, trajs, probs) -> list[str]:
    lines = []
    for tr, p in zip(trajs, probs):
        sel = np.flatnonzero(np.isfinite(tr.labels))
        for i in sel:
            lines.append(f"{method}\t{tr.user_id}\t{tr.t[i]:.3f}\t{int(tr.labels[i])}\t{p[i]:.6f}\n")
    return lines


PRED_HEADER = "method\tuser_id\tt\tlabel\tprob\n"


def cmd_finetune(cfg: PipelineConfig, args) -> int:
    out = _dir(cfg, "finetune")
    trajs, _ = _load_ingested(cfg, "es", "labels")
    trajs = [tr for tr in trajs if tr.user_id]
    ckpt = None
    ckpt_path = Path(args.checkpoint) if args.checkpoint else Path(cfg.output_dir) / "train" / "model.ckpt"
    if not args.from_scratch:
        if not ckpt_path.is_file():
            raise InputError(f"checkpoint {ckpt_path} not found; run 'staykit train' or pass --from-scratch")
        ckpt = load_checkpoint(ckpt_path)
    assignment = _participant_folds(trajs, cfg)
    trajs = [tr for tr in trajs if tr.user_id in assignment]
    dense = [interpolate(tr, cfg.data.interpolation_rate) for tr in trajs]
    method = "staykit (from scratch)" if args.from_scratch else "staykit"

    probs = [None] * len(trajs)
    rows, histories = [], []
    for k in range(cfg.folds):
        train_idx = [i for i, tr in enumerate(trajs) if assignment[tr.user_id] != k]
        test_idx = [i for i, tr in enumerate(trajs) if assignment[tr.user_id] == k]
        train_dense = [dense[i][0] for i in train_idx]
        windows = trajectory_windows(
            train_dense,
            [np.nan_to_num(d.labels, nan=0.0) for d in train_dense],
            [np.isfinite(d.labels).astype(float) for d in train_dense],
            cfg.model.seq_len,
        )
        if ckpt is None:
            data = build_dataset(windows)
            model = StayModel(_encoder_config(cfg))
            tcfg = _train_config(cfg, cfg.finetune, "supervised", args.deterministic, ssl=True)
        else:
            data = build_dataset(windows, ckpt.stats)
            model = load_checkpoint(ckpt_path).model
            tcfg = _train_config(cfg, cfg.finetune, "supervised", args.deterministic, ssl=False, freeze=("encoder", "ssl"))
        try:
            loss_cfg = LossConfig(data.label_mean(), cfg.finetune.lambda_vel, cfg.finetune.lambda_ang)
        except (TrainingError, ValueError) as exc:
            raise InputError(f"fold {k}: training labels unusable ({exc})") from exc
        history = train(model, data, tcfg, loss_cfg)
        histories.append("".join(f"{k}\t{e}\t{l:.8f}\n" for e, l in zip(history.epochs, history.losses)))
        save_checkpoint(out / f"fold{k}.ckpt", model, data.stats, {"c_bar_train": loss_cfg.c_bar_train},
                        {"objective": "supervised", "fold": k, "seq_len": cfg.model.seq_len})
        test_dense = [dense[i][0] for i in test_idx]
        dense_probs = predict_points(model, test_dense, data.stats, cfg.model.seq_len)
        for i, p in zip(test_idx, dense_probs):
            probs[i] = p[dense[i][1]]
        sel = [trajs[i] for i in test_idx]
        p = np.concatenate([probs[i][np.isfinite(trajs[i].labels)] for i in test_idx])
        y = np.concatenate([tr.labels[np.isfinite(tr.labels)] for tr in sel]).astype(int)
        if len(y):
            rows.append(evaluate_row(method, p, y, fold=k))

    lines = _prediction_lines(method, trajs, probs)
    _write(out / "predictions.tsv", PRED_HEADER + "".join(lines))
    p, y = _pooled(trajs, probs)
    pooled = evaluate_row(method, p, y, fold="all")
    _write(out / "metrics.tsv", rows_to_tsv(rows + [pooled]))
    _write(out / "history.tsv", "fold\tepoch\tloss\n" + "".join(histories))
    _write(out / "table.txt", format_table([pooled]))
    print(format_table([pooled]), end="")
    return EXIT_OK


def _pooled(trajs, probs):
    p = np.concatenate([pr[np.isfinite(tr.labels)] for tr, pr in zip(trajs, probs)])
    y = np.concatenate([tr.labels[np.isfinite(tr.labels)] for tr in trajs]).astype(int)
    return p, y


# -- baselines -------------------------------------------------------------------------


BASELINE_NAMES = {"kang": "Kang", "cbsmot": "CB-SMoT", "dstar": "D-Star"}


def cmd_baseline(cfg: PipelineConfig, args) -> int:
    out = _dir(cfg, "baseline")
    trajs, _ = _load_ingested(cfg, "es", "labels")
    assignment = _participant_folds(trajs, cfg)
    trajs = [tr for tr in trajs if tr.user_id in assignment]
    algorithms = args.algorithms.split(",") if args.algorithms else list(ALGORITHMS)
    tables, rows = [], []
    for alg in algorithms:
        if alg not in ALGORITHMS:
            raise InputError(f"unknown baseline {alg!r}; choose from {', '.join(ALGORITHMS)}")
        if alg == "dstar":
            ranges = {k: tuple(v) for k, v in cfg.search.dstar_ranges.items()}
            candidates = random_candidates(cfg.search.dstar_candidates, cfg.seed, ranges)
        else:
            candidates = grid_candidates(alg, cfg.search.grids.get(alg))
        result = hyperparameter_search(alg, trajs, candidates, cfg.folds, cfg.seed, assignment)
        tables.append(result.table() if not tables else result.table().split("\n", 1)[1])
        probs = [p.astype(float) for p in result.test_predictions]
        name = BASELINE_NAMES[alg]
        _write(out / f"predictions_{alg}.tsv", PRED_HEADER + "".join(_prediction_lines(name, trajs, probs)))
        p, y = _pooled(trajs, probs)
        rows.append(evaluate_row(name, p, y, fold="all", with_auc=False))
        log.info("%s: selected %s", name, result.selected)
    _write(out / "search.tsv", "".join(tables))
    _write(out / "metrics.tsv", rows_to_tsv(rows))
    _write(out / "table.txt", format_table(rows))
    print(format_table(rows), end="")
    return EXIT_OK


# -- evaluation ------------------------------------------------------------------------


def read_predictions(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """``method -> (probs, labels)`` from a predictions file."""
    grouped: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        next(fh, None)
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise InputError(f"{path}: malformed prediction row {line!r}")
            grouped.setdefault(parts[0], []).append((float(parts[4]), int(parts[3])))
    return {m: (np.array([r[0] for r in v]), np.array([r[1] for r in v])) for m, v in grouped.items()}


def constant_rows(labels) -> list[ResultRow]:
    labels = np.asarray(labels, dtype=int)
    return [
        evaluate_row("constant stay (c=1)", np.ones(len(labels)), labels, with_auc=False),
        evaluate_row("constant non-stay (c=0)", np.zeros(len(labels)), labels, with_auc=False),
    ]


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    out = _dir(cfg, "evaluate")
    base = Path(cfg.output_dir)
    files = [Path(p) for p in args.predictions] if args.predictions else (
        sorted((base / "baseline").glob("predictions_*.tsv")) + sorted((base / "finetune").glob("predictions.tsv"))
    )
    trajs, _ = _load_ingested(cfg, "es", "labels")
    labels = np.concatenate([tr.labels[np.isfinite(tr.labels)] for tr in trajs]) if trajs else np.zeros(0)
    if len(labels) == 0:
        raise InputError("no labelled points to evaluate")
    rows = constant_rows(labels)
    for f in files:
        if not f.is_file():
            raise InputError(f"predictions file {f} not found")
        hard = f.name.startswith("predictions_")
        for method, (p, y) in read_predictions(f).items():
            rows.append(evaluate_row(method, p, y, with_auc=not hard))
    _write(out / "metrics.tsv", rows_to_tsv(rows))
    _write(out / "table.txt", format_table(rows))
    print(format_table(rows), end="")
    return EXIT_OK


# -- transportation modes -----------------------------------------------------------------


def cmd_tmd(cfg: PipelineConfig, args) -> int:
    out = _dir(cfg, "tmd")
    trajs, _ = _load_ingested(cfg, "geolife", "modes")
    classes = [mode_classes(tr) for tr in trajs]
    windows = trajectory_windows(
        trajs,
        [np.maximum(c, 0).astype(float) for c in classes],
        [(c >= 0).astype(float) for c in classes],
        cfg.model.seq_len,
    )
    windows = [w for w in windows if (w.weights > 0).any()]
    if len(windows) < cfg.folds:
        raise InputError(f"{len(windows)} windows with mode annotations cannot fill {cfg.folds} folds")
    fold_of = split_by_sequence(len(windows), cfg.folds, cfg.seed)
    preds, truths, lines = [], [], []
    for k in range(cfg.folds):
        train_w = [w for w, f in zip(windows, fold_of) if f != k]
        test_w = [w for w, f in zip(windows, fold_of) if f == k]
        data = build_dataset(train_w)
        model = StayModel(_encoder_config(cfg), num_modes=NUM_MODES)
        try:
            loss_cfg = LossConfig(None, cfg.tmd.lambda_vel, cfg.tmd.lambda_ang, data.class_means(NUM_MODES))
        except TrainingError as exc:
            raise InputError(f"fold {k}: {exc}") from exc
        train(model, data, _train_config(cfg, cfg.tmd, "modes", args.deterministic), loss_cfg)
        test = build_dataset(test_w, data.stats)
        probs = predict(model, test)
        sel = (test.weights > 0) & test.mask
        p = probs[sel].argmax(axis=1)
        y = test.labels[sel].astype(int)
        preds.append(p)
        truths.append(y)
        lines.append(f"{k}\t{weighted_f1(p, y, NUM_MODES):.6f}\t{len(y)}\n")
    p, y = np.concatenate(preds), np.concatenate(truths)
    pooled = weighted_f1(p, y, NUM_MODES)
    lines.append(f"all\t{pooled:.6f}\t{len(y)}\n")
    _write(out / "metrics.tsv", "fold\tweighted_F1\tpoints\n" + "".join(lines))
    counts = np.bincount(y, minlength=NUM_MODES)
    table = f"weighted F1 {pooled:.3f} over {len(y)} points\n" + "".join(
        f"  {name:<6} {int(c)}\n" for name, c in zip(MODE_NAMES, counts)
    )
    _write(out / "table.txt", table)
    print(table, end="")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


OUTPUT_DIRS = {"weaklabel": "weak"}

COMMANDS = {
    "ingest": cmd_ingest,
    "weaklabel": cmd_weaklabel,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "tmd": cmd_tmd,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="YAML pipeline configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. pretrain.lr=1e-3 (repeatable)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, help="cap the number of numeric worker threads")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, bitwise reproducible numerics")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="staykit", description="Stay-region extraction pipeline.")
    parser.add_argument("--version", action="version", version=f"staykit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="parse and clean GeoLife / ExtraSensory")
    p.add_argument("--dataset", choices=("geolife", "es", "all"), default="all")
    p = sub.add_parser("weaklabel", parents=[common], help="weak labels from OSM heuristics")
    p.add_argument("--no-cache", action="store_true", help="recompute even if a cached result exists")
    sub.add_parser("train", parents=[common], help="pre-train on weak labels with SSL")
    p = sub.add_parser("finetune", parents=[common], help="cross-validated fine-tuning on labelled stays")
    p.add_argument("--checkpoint", help="pre-trained checkpoint (default: <out>/train/model.ckpt)")
    p.add_argument("--from-scratch", action="store_true", help="train a fresh model instead of fine-tuning")
    p = sub.add_parser("evaluate", parents=[common], help="metrics table over prediction files")
    p.add_argument("--predictions", nargs="*", help="prediction files (default: baseline and finetune outputs)")
    p = sub.add_parser("baseline", parents=[common], help="cross-validated baseline parameter search")
    p.add_argument("--algorithms", help="comma separated subset of kang,cbsmot,dstar")
    sub.add_parser("tmd", parents=[common], help="transportation mode detection with sequence folds")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        overrides = list(args.overrides)
        if args.out:
            overrides.append(f"output_dir={args.out}")
        cfg = load_config(args.config, overrides)
        if args.threads:
            set_deterministic(False, args.threads)
        if args.deterministic:
            set_deterministic(True)
        dump_config(cfg, Path(cfg.output_dir) / OUTPUT_DIRS.get(args.command, args.command) / "config.yaml")
        return COMMANDS[args.command](cfg, args)
    except (InputError, *INPUT_ERRORS) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
