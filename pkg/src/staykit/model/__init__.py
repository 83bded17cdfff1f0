from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .encoder import EncoderConfig, TransformerEncoder
from .heads import MODE_NAMES, NUM_MODES, ForecastHeads, ModeDecoder, StayDecoder, StayModel, aggregate
from .losses import (
    LossConfig,
    SslTargets,
    bce,
    mean_label,
    mode_loss,
    multitask_loss,
    ssl_targets,
    supervised_loss,
    weak_loss,
    weighted_bce,
    weighted_ce,
)
from .training import TrainConfig, WindowDataset, build_dataset, predict, predict_points, train, trajectory_windows

__all__ = [
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "EncoderConfig", "TransformerEncoder",
    "MODE_NAMES", "NUM_MODES", "ForecastHeads", "ModeDecoder", "StayDecoder", "StayModel", "aggregate",
    "LossConfig", "SslTargets", "bce", "mean_label", "mode_loss", "multitask_loss", "ssl_targets",
    "supervised_loss", "weak_loss", "weighted_bce", "weighted_ce",
    "TrainConfig", "WindowDataset", "build_dataset", "predict", "predict_points", "train", "trajectory_windows",
]
