"""Pointwise metrics with non-stays as the positive class, PR-AUC, weighted F1 and CV splits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class PointwiseMetrics:
    accuracy: float
    precision: float | None
    recall: float
    f1: float
    counts: ConfusionCounts


def confusion(pred_probs, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts with non-stay positive: predicted positive iff stay probability < threshold."""
    p = np.asarray(pred_probs, dtype=float)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise MetricsError("predictions and labels must align")
    pos_pred = p < threshold
    pos_true = y == 0
    return ConfusionCounts(
        tp=int(np.sum(pos_pred & pos_true)),
        fp=int(np.sum(pos_pred & ~pos_true)),
        tn=int(np.sum(~pos_pred & ~pos_true)),
        fn=int(np.sum(~pos_pred & pos_true)),
    )


def pointwise_metrics(pred_probs, labels, threshold: float = 0.5) -> PointwiseMetrics:
    if len(np.asarray(labels)) == 0:
        raise MetricsError("no labels to evaluate")
    c = confusion(pred_probs, labels, threshold)
    accuracy = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else None
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    if precision is None or precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return PointwiseMetrics(accuracy, precision, recall, f1, c)


def pr_auc(pred_probs, labels) -> float:
    """Area under the non-stay precision-recall curve by right-step summation.

    Scores are ``1 - stay probability``; tied scores form one threshold.
    """
    p = np.asarray(pred_probs, dtype=float)
    y = np.asarray(labels)
    pos = y == 0
    if pos.all() or not pos.any():
        raise MetricsError("PR-AUC needs both classes")
    score = 1.0 - p
    order = np.argsort(-score, kind="stable")
    score, pos = score[order], pos[order]
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    last = np.r_[np.flatnonzero(np.diff(score)), len(score) - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / pos.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def weighted_f1(pred_modes, labels, num_modes: int) -> float:
    """Support-weighted mean of one-vs-rest F1 over classes ``0..num_modes-1``.

    ``pred_modes`` are class ids, or an ``(N, M)`` probability array (argmax taken).
    """
    pred = np.asarray(pred_modes)
    if pred.ndim == 2:
        pred = pred.argmax(axis=1)
    y = np.asarray(labels)
    if len(y) == 0:
        raise MetricsError("no labels to evaluate")
    total = 0.0
    for m in range(num_modes):
        support = np.sum(y == m)
        if support == 0:
            continue
        tp = np.sum((pred == m) & (y == m))
        fp = np.sum((pred == m) & (y != m))
        fn = support - tp
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        total += support * f1
    return float(total / len(y))


def split_by_participant(point_counts: Mapping[str, int], folds: int = 5, seed: int = 0) -> dict[str, int]:
    """Assign whole participants to folds, greedily balancing point counts.

    Participants are visited largest first (ties in seeded random order) and
    each goes to the currently lightest fold.
    """
    users = list(point_counts)
    if len(users) < folds:
        raise MetricsError(f"{len(users)} participants cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(users))
    order = sorted(range(len(users)), key=lambda i: (-point_counts[users[i]], tiebreak[i]))
    load = np.zeros(folds)
    assignment = {}
    for i in order:
        k = int(np.argmin(load))
        assignment[users[i]] = k
        load[k] += point_counts[users[i]]
    return assignment


def split_by_sequence(count: int, folds: int = 5, seed: int = 0) -> np.ndarray:
    """Uniformly random fold id for each of ``count`` windows (sizes differ by at most one)."""
    if count < folds:
        raise MetricsError(f"{count} windows cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(count)
    out = np.empty(count, dtype=int)
    out[perm] = np.arange(count) % folds
    return out


# -- tables ---------------------------------------------------------------


@dataclass
class ResultRow:
    method: str
    fold: str
    f1: float
    accuracy: float
    pr_auc: float | None
    precision: float | None
    recall: float


def evaluate_row(method: str, pred_probs, labels, fold="all", with_auc: bool = True) -> ResultRow:
    m = pointwise_metrics(pred_probs, labels)
    auc = None
    if with_auc:
        try:
            auc = pr_auc(pred_probs, labels)
        except MetricsError:
            auc = None
    return ResultRow(method, str(fold), m.f1, m.accuracy, auc, m.precision, m.recall)


def _fmt(v):
    return "-" if v is None else f"{v:.3f}"


def format_table(rows: Sequence[ResultRow]) -> str:
    """Aligned plain-text table of pooled results."""
    header = ("Method", "F1", "Acc.", "PR-AUC", "Precision", "Recall")
    lines = [header] + [(r.method, _fmt(r.f1), _fmt(r.accuracy), _fmt(r.pr_auc), _fmt(r.precision), _fmt(r.recall)) for r in rows]
    widths = [max(len(l[i]) for l in lines) for i in range(len(header))]
    out = []
    for k, line in enumerate(lines):
        cells = [line[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(line[1:], widths[1:])]
        out.append("  ".join(cells))
        if k == 0:
            out.append("-" * len(out[0]))
    return "\n".join(out) + "\n"


def rows_to_tsv(rows: Sequence[ResultRow]) -> str:
    def f(v):
        return "-" if v is None else f"{v:.6f}"

    head = "method\tfold\tF1\taccuracy\tPR-AUC\tprecision\trecall\n"
    return head + "".join(
        f"{r.method}\t{r.fold}\t{f(r.f1)}\t{f(r.accuracy)}\t{f(r.pr_auc)}\t{f(r.precision)}\t{f(r.recall)}\n" for r in rows
    )
