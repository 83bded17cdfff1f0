"""Window datasets, the training loop and batched inference."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..trajectory import (
    SequenceWindow,
    StandardizationStats,
    Trajectory,
    chunk,
    compute_features,
    compute_stats,
    standardize,
    window_seed,
)
from .heads import StayModel
from .losses import LossConfig, multitask_loss, mode_loss, supervised_loss, weak_loss

log = logging.getLogger(__name__)

OBJECTIVES = ("weak", "supervised", "modes")


class TrainingError(RuntimeError):
    pass


def set_deterministic(enabled: bool = True, threads: int | None = None) -> None:
    if threads:
        torch.set_num_threads(threads)
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def rotation_angle(seed_material) -> float:
    return float(np.random.default_rng(seed_material).uniform(0.0, 2 * math.pi))


@dataclass
class WindowDataset:
    """Stacked standardised windows.

    ``labels`` are stay probabilities (or class ids for the mode objective),
    ``weights`` per-point loss weights (0 = ignore). ``next_step`` holds the raw
    ``(dx, dy, dt)`` to the point after each window, NaN when there is none.
    """

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    mask: np.ndarray
    next_step: np.ndarray
    origins: list = field(default_factory=list)
    stats: StandardizationStats | None = None

    def __len__(self):
        return len(self.features)

    @property
    def seq_len(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_windows(cls, windows: Sequence[SequenceWindow], stats: StandardizationStats | None = None):
        if not windows:
            raise TrainingError("no windows")
        nan3 = np.full(3, np.nan)
        return cls(
            np.stack([w.rows for w in windows]).astype(np.float32),
            np.stack([w.labels for w in windows]),
            np.stack([w.weights for w in windows]),
            np.stack([w.mask for w in windows]),
            np.stack([nan3 if w.next_step is None else w.next_step for w in windows]),
            [w.origin for w in windows],
            stats,
        )

    def subset(self, idx) -> "WindowDataset":
        idx = np.asarray(idx, dtype=int)
        return WindowDataset(
            self.features[idx], self.labels[idx], self.weights[idx], self.mask[idx],
            self.next_step[idx], [self.origins[i] for i in idx], self.stats,
        )

    def has_ssl(self) -> np.ndarray:
        return np.all(np.isfinite(self.next_step), axis=1)

    def label_mean(self) -> float:
        """Weight-averaged label over real points (the training-set class balance)."""
        w = self.weights * self.mask
        if w.sum() <= 0:
            raise TrainingError("no labelled points")
        return float((self.labels * w).sum() / w.sum())

    def class_means(self, num_modes: int) -> np.ndarray:
        sel = (self.weights > 0) & self.mask
        counts = np.bincount(self.labels[sel].astype(int), minlength=num_modes)[:num_modes].astype(float)
        if counts.sum() == 0:
            raise TrainingError("no labelled points")
        # unseen classes get a single pseudo-count so the weighting stays finite
        counts = np.maximum(counts, 1.0)
        return counts / counts.sum()


def trajectory_windows(
    trajectories: Sequence[Trajectory],
    labels: Sequence[np.ndarray] | None = None,
    weights: Sequence[np.ndarray] | None = None,
    n: int = 256,
) -> list[SequenceWindow]:
    """Raw (unstandardised) windows of every trajectory with at least two points."""
    out = []
    offsets: dict[str, int] = {}
    for k, tr in enumerate(trajectories):
        offset = offsets.get(tr.user_id, 0)
        offsets[tr.user_id] = offset + len(tr)
        if len(tr) < 2:
            continue
        feats = compute_features(tr)
        lab = None if labels is None else labels[k]
        w = None if weights is None else weights[k]
        for win in chunk(feats, lab, w, n, tr.user_id):
            # origin index counts over all of the user's points, not just this piece
            win.origin = (tr.user_id, offset + win.origin[1])
            out.append(win)
    return out


def build_dataset(windows: Sequence[SequenceWindow], stats: StandardizationStats | None = None) -> WindowDataset:
    """Standardise ``windows`` (with training statistics computed if not given) and stack."""
    stats = compute_stats(windows) if stats is None else stats
    return WindowDataset.from_windows(standardize(windows, stats), stats)


@dataclass
class TrainConfig:
    objective: str = "weak"
    epochs: int = 30
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    batch_size: int = 64
    seed: int = 0
    ssl: bool = True
    freeze: tuple = ()
    rotate: bool = True
    deterministic: bool = False

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise TrainingError(f"objective must be one of {OBJECTIVES}")
        if self.epochs < 0 or self.batch_size <= 0 or self.lr <= 0:
            raise TrainingError("epochs, batch size and learning rate must be positive")
        self.freeze = tuple(self.freeze)
        self.betas = tuple(self.betas)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def to_tsv(self) -> str:
        return "epoch\tloss\n" + "".join(f"{e}\t{l:.8f}\n" for e, l in zip(self.epochs, self.losses))


def _frozen(name: str, freeze) -> bool:
    return any(name == f or name.startswith(f + ".") for f in freeze)


def rotated_batch(data: WindowDataset, idx, seed: int, epoch: int, rotate: bool):
    """Features and next-step displacements of ``idx``, each window rotated by its own angle."""
    x = data.features[idx].copy()
    step = data.next_step[idx].copy()
    if rotate:
        angles = np.array([rotation_angle(window_seed(seed, data.origins[i], epoch)) for i in idx])
        c, s = np.cos(angles)[:, None], np.sin(angles)[:, None]
        px, py = x[:, :, 0].copy(), x[:, :, 1].copy()
        x[:, :, 0] = c * px - s * py
        x[:, :, 1] = s * px + c * py
        sx, sy = step[:, 0].copy(), step[:, 1].copy()
        step[:, 0] = c[:, 0] * sx - s[:, 0] * sy
        step[:, 1] = s[:, 0] * sx + c[:, 0] * sy
    return x, step


def forecast_targets(step: np.ndarray, stats: StandardizationStats | None):
    """Standardised velocity and bearing sine/cosine from raw next-step displacements."""
    valid = np.all(np.isfinite(step), axis=1)
    dx, dy, dt = (np.where(valid, step[:, k], 1.0) for k in range(3))
    v = np.hypot(dx, dy) / dt
    if stats is not None:
        v = (v - stats.mean_v) / stats.std_v
    alpha = np.arctan2(dy, dx)
    zero = np.zeros_like(v)
    return (
        np.where(valid, v, zero),
        np.where(valid, np.sin(alpha), zero),
        np.where(valid, np.cos(alpha), zero),
        valid,
    )


def batch_loss(model: StayModel, data: WindowDataset, idx, config: TrainConfig, loss_config: LossConfig, epoch: int):
    x, step = rotated_batch(data, idx, config.seed, epoch, config.rotate)
    dtype = next(model.parameters()).dtype
    xt = torch.as_tensor(x, dtype=dtype)
    mask = torch.as_tensor(data.mask[idx])
    probs, emb = model(xt, mask)
    labels = torch.as_tensor(data.labels[idx], dtype=dtype)
    weights = torch.as_tensor(data.weights[idx], dtype=dtype)

    downstream = None
    if config.objective == "weak":
        if float((weights * mask).sum()) > 0:
            downstream = weak_loss(probs, labels, weights, mask, loss_config.c_bar_train)
    elif config.objective == "supervised":
        sel = mask & (weights > 0)
        if sel.any():
            downstream = supervised_loss(probs, labels, sel, loss_config.c_bar_train)
    else:
        classes = torch.where(weights > 0, labels.long(), torch.full_like(labels, -1).long())
        if bool(((classes >= 0) & mask).any()):
            downstream = mode_loss(probs, classes, mask, torch.as_tensor(loss_config.class_means, dtype=dtype))

    if downstream is None:
        downstream = probs.sum() * 0.0
    if not config.ssl:
        return downstream
    v, sin, cos, valid = forecast_targets(step, data.stats)
    if not valid.any():
        return downstream
    v_hat, sin_hat, cos_hat = model.ssl(emb, mask)
    as_t = lambda a: torch.as_tensor(a, dtype=dtype)  # noqa: E731
    return multitask_loss(
        downstream, v_hat, as_t(v), sin_hat, as_t(sin), cos_hat, as_t(cos),
        loss_config.lambda_vel, loss_config.lambda_ang, as_t(valid),
    )


def train(
    model: StayModel,
    data: WindowDataset,
    config: TrainConfig,
    loss_config: LossConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainHistory:
    """Minimise the selected objective with Adam; frozen parameters are left untouched."""
    if config.deterministic:
        set_deterministic(True)
    if config.objective in ("weak", "supervised") and loss_config.c_bar_train is None:
        raise TrainingError("c_bar_train is required for the stay objectives")
    if config.objective == "modes" and loss_config.class_means is None:
        raise TrainingError("class_means are required for the mode objective")

    trainable = []
    for name, p in model.named_parameters():
        frozen = _frozen(name, config.freeze)
        p.requires_grad_(not frozen)
        if not frozen:
            trainable.append(p)
    if not trainable:
        raise TrainingError("every parameter is frozen")
    frozen_modules = [m for name, m in model.named_children() if _frozen(name, config.freeze)]

    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(trainable, lr=config.lr, betas=config.betas, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    for epoch in range(1, config.epochs + 1):
        model.train()
        for m in frozen_modules:
            m.eval()
        order = rng.permutation(len(data))
        total, batches = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            idx = order[s : s + config.batch_size]
            loss = batch_loss(model, data, idx, config, loss_config, epoch)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batches} (windows {list(idx[:5])}...)")
            if not loss.requires_grad:
                continue
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            batches += 1
        mean = total / max(batches, 1)
        history.epochs.append(epoch)
        history.losses.append(mean)
        log.info("epoch %d loss %.6f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return history


@torch.no_grad()
def predict(model: StayModel, data: WindowDataset, batch_size: int = 128) -> np.ndarray:
    """Per-window outputs: ``(N, n)`` stay probabilities or ``(N, n, M)`` mode probabilities."""
    model.eval()
    dtype = next(model.parameters()).dtype
    outs = []
    for s in range(0, len(data), batch_size):
        x = torch.as_tensor(data.features[s : s + batch_size], dtype=dtype)
        mask = torch.as_tensor(data.mask[s : s + batch_size])
        probs, _ = model(x, mask)
        outs.append(probs.double().numpy())
    return np.concatenate(outs) if outs else np.zeros((0,))


def predict_points(model: StayModel, trajectories: Sequence[Trajectory], stats: StandardizationStats, n: int = 256):
    """Per-point outputs for every trajectory (trajectories shorter than 2 points get NaN)."""
    results = []
    for tr in trajectories:
        if len(tr) < 2:
            results.append(np.full(len(tr), np.nan))
            continue
        data = build_dataset(trajectory_windows([tr], n=n), stats)
        out = predict(model, data)
        results.append(np.concatenate([o[m] for o, m in zip(out, data.mask)]))
    return results
