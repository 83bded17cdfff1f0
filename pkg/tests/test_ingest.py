from __future__ import annotations

import calendar
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from staykit.ingest import (
    EXCEL_EPOCH_OFFSET_DAYS,
    EsRecord,
    IngestError,
    IngestReport,
    annotate_modes,
    derive_es_labels,
    es_trajectories,
    group_mode,
    interpolate,
    load_activity_mapping,
    mode_classes,
    normalize_activity,
    parse_extrasensory,
    parse_geolife,
    parse_plt_line,
    read_mode_labels,
    remove_suspicious_stays,
    suspicious_stay_threshold,
)
from staykit.synthetic import generate_corpus, write_extrasensory_tree, write_geolife_tree
from staykit.trajectory import Trajectory

HEADER = "Geolife trajectory\nWGS 84\nAltitude is in Feet\nReserved 3\n0,2,255,My Track,0,0,2,8421376\n0\n"


def test_plt_line_epoch():
    lat, lon, t, days = parse_plt_line("39.906,116.391,0,92,39448.0,2008-01-01,00:00:00")
    assert (lat, lon) == (39.906, 116.391)
    assert t == 1199145600.0
    assert t == calendar.timegm((2008, 1, 1, 0, 0, 0))
    assert (days - EXCEL_EPOCH_OFFSET_DAYS) * 86400 == t
    with pytest.raises(IngestError):
        parse_plt_line("39.9,116.3,0")
    with pytest.raises(IngestError):
        parse_plt_line("95.0,116.3,0,0,39448,2008-01-01,00:00:00")


def write_user(root, user, rows, labels=None):
    d = root / "Data" / user / "Trajectory"
    d.mkdir(parents=True)
    (d / "a.plt").write_text(HEADER + "\n".join(rows) + "\n")
    if labels is not None:
        (root / "Data" / user / "labels.txt").write_text("Start Time\tEnd Time\tTransportation Mode\n" + labels)


def test_parse_geolife_small_tree(tmp_path):
    rows = [
        "39.9000,116.4000,0,92,39448.0,2008-01-01,00:00:00",
        "39.9001,116.4000,0,92,39448.0000578704,2008-01-01,00:00:05",
        "garbage line",
        "39.9002,116.4000,0,92,39448.000115741,2008-01-01,00:00:10",
        "39.9003,116.4000,0,92,39448.2,2008-01-01,00:00:15",  # days field disagrees
        "39.9002,116.4000,0,92,39448.000115741,2008-01-01,00:00:10",  # duplicate
    ]
    write_user(tmp_path, "000", rows, "2008/01/01 00:00:04\t2008/01/01 00:00:10\tbus\n")
    write_user(tmp_path, "001", rows[:2])
    report = IngestReport()
    trajs = parse_geolife(tmp_path, zone="50N", report=report)
    assert [t.user_id for t in trajs] == ["000", "001"]
    a, b = trajs
    assert list(a.t - a.t[0]) == [0, 5, 10, 15]
    assert list(a.modes) == [None, "bus", "bus", None]
    assert b.modes is None
    assert report.malformed == 1 and report.duplicates == 1 and report.day_mismatches == 1
    assert report.files == 2 and report.per_user == {"000": 4, "001": 2}
    assert all(np.all(np.diff(t.t) > 0) for t in trajs)
    # root or root/Data both work
    assert len(parse_geolife(tmp_path / "Data", zone="50N")) == 2
    with pytest.raises(IngestError):
        parse_geolife(tmp_path / "missing")


def test_mode_ranges(tmp_path):
    p = tmp_path / "labels.txt"
    p.write_text("Start Time\tEnd Time\tTransportation Mode\n"
                 "2008/01/01 00:10:00\t2008/01/01 00:20:00\tbus\n"
                 "2008/01/01 00:00:00\t2008/01/01 00:05:00\twalk\nbroken\n")
    ranges = read_mode_labels(p)
    assert [r[2] for r in ranges] == ["walk", "bus"]
    t0 = 1199145600.0
    got = annotate_modes(t0 + np.array([-1, 0, 300, 301, 600, 900, 1200, 1201]), ranges)
    assert list(got) == [None, "walk", "walk", None, "bus", "bus", "bus", None]
    assert list(annotate_modes([t0], [])) == [None]


def test_geolife_round_trip_from_synthetic(tmp_path):
    corpus = generate_corpus(num_users=2, points_per_user=300, seed=4, modes=("walk", "bus", "car"))
    trajs = [s.traj for s in corpus]
    write_geolife_tree(tmp_path, trajs)
    back = parse_geolife(tmp_path, zone="50N")
    for a, b in zip(trajs, back):
        assert np.array_equal(np.floor(a.t), b.t)
        assert np.allclose(a.x, b.x, atol=1e-3) and np.allclose(a.y, b.y, atol=1e-3)
        assert list(a.modes) == list(b.modes)


def test_normalize_and_mapping(tmp_path):
    assert normalize_activity("label:FIX_walking") == "walking"
    assert normalize_activity("WATCHING_TV") == "watching tv"
    assert normalize_activity("label:DRIVE_-_I_M_THE_DRIVER") == "drive i m the driver"
    assert normalize_activity("LOC_home") == "home"
    m = load_activity_mapping()
    assert m["watching tv"] == "stay" and m["biking"] == "non-stay"

    def label(*acts):
        return derive_es_labels([EsRecord("u", 0, 0, 0, frozenset(acts))], m)[0]

    assert label("watching TV") == 1
    assert label("biking") == 0
    assert math.isnan(label("sitting", "in a car"))
    assert label("SITTING", "WATCHING_TV") == 1
    assert label("SITTING", "PHONE_ON_TABLE") == 1
    assert math.isnan(label("PHONE_ON_TABLE"))
    assert math.isnan(label())
    custom = tmp_path / "map.txt"
    custom.write_text("# comment\nSITTING\tnon-stay\nbiking,ignore\n")
    cm = load_activity_mapping(custom)
    assert cm == {"sitting": "non-stay", "biking": "ignore"}
    custom.write_text("sitting\tmaybe\n")
    with pytest.raises(IngestError):
        load_activity_mapping(custom)


@settings(max_examples=100)
@given(st.sets(st.sampled_from(["sitting", "walking", "biking", "watching tv", "phone on table", "home", "in a car"])))
def test_es_labels_never_label_conflicts(acts):
    m = load_activity_mapping()
    y = derive_es_labels([EsRecord("u", 0, 0, 0, frozenset(acts))], m)[0]
    classes = {m.get(a) for a in acts} - {None, "ignore"}
    if len(classes) != 1:
        assert math.isnan(y)
    else:
        assert y == (1 if classes == {"stay"} else 0)


def test_parse_extrasensory(tmp_path):
    corpus = generate_corpus(num_users=2, points_per_user=120, seed=5, dt_choices=(60,))
    trajs = [s.traj for s in corpus]
    trajs[0].labels[3] = np.nan
    write_extrasensory_tree(tmp_path, trajs, seed=1, conflict_rate=0.0)
    report = IngestReport()
    recs = parse_extrasensory(tmp_path, report)
    assert len(recs) == 240 and report.files == 2 and report.malformed == 0
    labels = derive_es_labels(recs)
    es = es_trajectories(recs, labels, zone="50N")
    assert [t.user_id for t in es] == ["u000", "u001"]
    for a, b in zip(trajs, es):
        assert np.array_equal(np.isnan(a.labels), np.isnan(b.labels))
        ok = ~np.isnan(a.labels)
        assert np.array_equal(a.labels[ok], b.labels[ok])
        assert np.allclose(a.x, b.x, atol=1e-3)
    with pytest.raises(IngestError):
        parse_extrasensory(tmp_path / "nope")


def test_extrasensory_conflicts_are_unlabelled(tmp_path):
    corpus = generate_corpus(num_users=1, points_per_user=200, seed=6, dt_choices=(60,))
    write_extrasensory_tree(tmp_path, [corpus[0].traj], seed=2, conflict_rate=0.3)
    labels = derive_es_labels(parse_extrasensory(tmp_path))
    frac = np.isnan(labels).mean()
    assert 0.15 < frac < 0.45


def line_traj(v_stay, labels):
    # equal 10 s steps; speeds chosen per point
    n = len(labels)
    t = np.arange(n) * 10.0
    x = np.concatenate([[0.0], np.cumsum(np.asarray(v_stay[1:]) * 10.0)])
    return Trajectory("u", t, x, np.zeros(n), labels=np.asarray(labels, dtype=float))


def test_suspicious_stays():
    # non-stay points move at 2 m/s; one stay point at 20 m/s, one at 0
    tr = line_traj([0, 2, 2, 20, 0, 0], [0, 0, 0, 1, 1, 1])
    assert suspicious_stay_threshold([tr]) == pytest.approx(4 / 3)
    out = remove_suspicious_stays([tr])[0]
    assert math.isnan(out.labels[3])
    assert list(out.labels[[0, 1, 2, 4, 5]]) == [0, 0, 0, 1, 1]
    again = remove_suspicious_stays([out])[0]
    assert np.array_equal(np.isnan(again.labels), np.isnan(out.labels))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_suspicious_removal_idempotent(seed):
    rng = np.random.default_rng(seed)
    n = 30
    tr = line_traj(rng.uniform(0, 10, n), rng.integers(0, 2, n))
    once = remove_suspicious_stays([tr])
    twice = remove_suspicious_stays(once)
    assert np.array_equal(np.isnan(once[0].labels), np.isnan(twice[0].labels))


def test_suspicious_without_non_stays(caplog):
    tr = line_traj([0, 1, 1], [1, 1, 1])
    with caplog.at_level(logging.WARNING):
        out = remove_suspicious_stays([tr])
    assert np.array_equal(out[0].labels, tr.labels)
    assert "no non-stay" in caplog.text


def test_interpolate_examples():
    tr = Trajectory("u", [0.0, 60.0], [0.0, 60.0], [0.0, -30.0], labels=[1.0, 0.0])
    dense, idx = interpolate(tr)
    assert len(dense) == 2 + 29
    assert list(idx) == [0, 30]
    assert np.allclose(np.diff(dense.t), 2.0)
    assert np.allclose(dense.x, dense.t) and np.allclose(dense.y, -dense.t / 2)
    assert list(dense.labels[idx]) == [1.0, 0.0] and np.isnan(dense.labels[1:30]).all()
    # an uneven gap keeps both originals
    tr = Trajectory("u", [0.0, 5.0, 6.0], [0.0, 5.0, 6.0], [0.0, 0.0, 0.0])
    dense, idx = interpolate(tr)
    assert list(dense.t) == [0, 2, 4, 5, 6]
    assert list(idx) == [0, 3, 4]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_interpolate_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    t = np.cumsum(rng.uniform(0.5, 30, n))
    tr = Trajectory("u", t, rng.normal(0, 100, n), rng.normal(0, 100, n), labels=rng.integers(0, 2, n))
    dense, idx = interpolate(tr)
    assert len(idx) == n
    assert np.array_equal(dense.t[idx], tr.t)
    assert np.array_equal(dense.x[idx], tr.x) and np.array_equal(dense.y[idx], tr.y)
    assert np.all(np.diff(dense.t) > 0) and np.all(np.diff(dense.t) <= 2.0 + 1e-9)
    for k in range(n - 1):
        seg = slice(idx[k], idx[k + 1] + 1)
        # collinear with and between the two originals
        ax, ay, bx, by = tr.x[k], tr.y[k], tr.x[k + 1], tr.y[k + 1]
        cross = (bx - ax) * (dense.y[seg] - ay) - (by - ay) * (dense.x[seg] - ax)
        assert np.allclose(cross, 0, atol=1e-6 * (1 + abs(bx - ax) + abs(by - ay)) ** 2)
        assert np.all(dense.x[seg] >= min(ax, bx) - 1e-9) and np.all(dense.x[seg] <= max(ax, bx) + 1e-9)


def test_mode_grouping():
    assert [group_mode(m) for m in ("walk", "run", "bike", "bus", "taxi", "car", "subway", "train")] == [
        0, 0, 1, 2, 3, 3, 4, 4]
    assert group_mode("airplane") == -1 and group_mode(None) == -1 and group_mode(float("nan")) == -1
    tr = Trajectory("u", [0, 1, 2], [0, 0, 0], [0, 0, 0], modes=["Bus", None, "boat"])
    assert list(mode_classes(tr)) == [2, -1, -1]
    assert list(mode_classes(Trajectory("u", [0, 1], [0, 0], [0, 0]))) == [-1, -1]
