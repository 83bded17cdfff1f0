"""Loss functions on probabilities (clamped before logs)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

EPS = 1e-7


class LossInputError(ValueError):
    pass


def _t(value, like=None) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(value, dtype=dtype)


def _check_mean(c_bar):
    c = float(c_bar)
    if not 0.0 < c < 1.0:
        raise LossInputError(f"mean training label must lie strictly in (0, 1), got {c}")


def bce(c_hat, c) -> torch.Tensor:
    c_hat = _t(c_hat)
    c = _t(c, c_hat)
    p = c_hat.clamp(EPS, 1 - EPS)
    return -c * torch.log(p) - (1 - c) * torch.log(1 - p)


def class_weight(c, c_bar) -> torch.Tensor:
    c = _t(c)
    return c / c_bar + (1 - c) / (1 - c_bar)


def weighted_bce(c_hat, c, c_bar) -> torch.Tensor:
    _check_mean(c_bar)
    c_hat = _t(c_hat)
    c = _t(c, c_hat)
    return class_weight(c, c_bar) * bce(c_hat, c)


def supervised_loss(pred, labels, mask, c_bar) -> torch.Tensor:
    """Mean class-weighted BCE over real (mask True) points of the batch."""
    pred = _t(pred)
    m = _t(mask, pred).to(pred.dtype)
    count = m.sum()
    if count <= 0:
        raise LossInputError("batch has no unmasked points")
    return (weighted_bce(pred, _t(labels, pred), c_bar) * m).sum() / count


def weak_loss(pred, c_weak, w_weak, mask, c_bar_weak) -> torch.Tensor:
    """Confidence-weighted class-weighted BCE, normalised by the number of real points."""
    pred = _t(pred)
    m = _t(mask, pred).to(pred.dtype)
    w = _t(w_weak, pred) * m
    if (w < 0).any():
        raise LossInputError("confidence weights must be non-negative")
    if w.sum() <= 0:
        raise LossInputError("total confidence weight is zero")
    return (w * weighted_bce(pred, _t(c_weak, pred), c_bar_weak)).sum() / m.sum()


def mean_label(c, w=None) -> float:
    """Training-set label mean, confidence-weighted when ``w`` is given."""
    c = np.asarray(c, dtype=float)
    if w is None:
        return float(c.mean())
    w = np.asarray(w, dtype=float)
    if w.sum() <= 0:
        raise LossInputError("total confidence weight is zero")
    return float((c * w).sum() / w.sum())


def mse(pred, target, valid=None) -> torch.Tensor:
    pred = _t(pred)
    target = _t(target, pred)
    sq = (pred - target) ** 2
    if valid is None:
        return sq.mean()
    v = _t(valid, pred).to(pred.dtype)
    if v.sum() <= 0:
        return pred.sum() * 0.0
    return (sq * v).sum() / v.sum()


def multitask_loss(
    downstream,
    v_hat, v,
    sin_hat, sin, cos_hat, cos,
    lambda_vel: float = 0.1,
    lambda_ang: float = 0.1,
    valid=None,
) -> torch.Tensor:
    """Downstream loss plus weighted velocity and bearing forecast MSEs."""
    if lambda_vel < 0 or lambda_ang < 0:
        raise LossInputError("forecast weights must be non-negative")
    l_vel = mse(v_hat, v, valid)
    l_ang = mse(sin_hat, sin, valid) + mse(cos_hat, cos, valid)
    return _t(downstream) + lambda_vel * l_vel + lambda_ang * l_ang


def weighted_ce(probs, one_hot, class_means) -> torch.Tensor:
    """Cross entropy with each class scaled by ``1 / (M * class_mean)``."""
    probs = _t(probs)
    one_hot = _t(one_hot, probs)
    means = _t(class_means, probs)
    if (means <= 0).any():
        raise LossInputError("class means must be strictly positive")
    m = probs.shape[-1]
    logp = torch.log(probs.clamp(EPS, 1 - EPS))
    return -(one_hot * logp / (m * means)).sum(dim=-1)


def mode_loss(probs, classes, mask, class_means) -> torch.Tensor:
    """Mean weighted CE over labelled real points; ``classes < 0`` marks unlabeled."""
    probs = _t(probs)
    classes = torch.as_tensor(classes)
    labelled = _t(mask, probs).bool() & (classes >= 0)
    if not labelled.any():
        raise LossInputError("batch has no labelled points")
    one_hot = torch.nn.functional.one_hot(classes.clamp_min(0).long(), probs.shape[-1]).to(probs.dtype)
    ce = weighted_ce(probs, one_hot, class_means)
    lw = labelled.to(probs.dtype)
    return (ce * lw).sum() / lw.sum()


@dataclass
class LossConfig:
    c_bar_train: float | None = None
    lambda_vel: float = 0.1
    lambda_ang: float = 0.1
    class_means: Sequence[float] | None = None

    def __post_init__(self):
        if self.c_bar_train is not None:
            _check_mean(self.c_bar_train)
        if self.lambda_vel < 0 or self.lambda_ang < 0:
            raise LossInputError("forecast weights must be non-negative")
        if self.class_means is not None:
            cm = np.asarray(self.class_means, dtype=float)
            if np.any(cm <= 0):
                raise LossInputError("class means must be strictly positive")
            if abs(cm.sum() - 1) > 1e-6:
                raise LossInputError("class means must sum to 1")


@dataclass(frozen=True)
class SslTargets:
    v_next: float
    sin_next: float
    cos_next: float


def ssl_targets(next_point, last_point) -> SslTargets:
    """Velocity and bearing of the step from ``last_point`` to ``next_point``.

    Points are anything with ``t``, ``x`` and ``y`` attributes.
    """
    dt = next_point.t - last_point.t
    if dt <= 0:
        raise LossInputError("next point must be strictly later than the last point")
    dx = next_point.x - last_point.x
    dy = next_point.y - last_point.y
    alpha = math.atan2(dy, dx)
    return SslTargets(math.hypot(dx, dy) / dt, math.sin(alpha), math.cos(alpha))
