"""Pipeline configuration: nested dataclasses loaded from YAML with dotted overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .osm import DEFAULT_BOX_SIZES


class ConfigValidationError(ValueError):
    pass


@dataclass
class DataConfig:
    geolife_root: str | None = None
    es_root: str | None = None
    osm_geojson: list = field(default_factory=list)
    overpass: bool = False
    overpass_url: str = "https://overpass-api.de/api/interpreter"
    utm_zone: str | None = None
    activity_mapping: str | None = None
    max_gap: float = 1200.0
    max_speed: float = 350.0
    interpolation_rate: float = 0.5


@dataclass
class LabelingConfig:
    box_sizes: dict = field(default_factory=lambda: dict(DEFAULT_BOX_SIZES))


@dataclass
class ModelConfig:
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    seq_len: int = 256


@dataclass
class TrainingConfig:
    epochs: int = 30
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 64
    ssl: bool = True
    rotate: bool = True
    lambda_vel: float = 0.1
    lambda_ang: float = 0.1


@dataclass
class SearchConfig:
    grids: dict = field(
        default_factory=lambda: {
            "kang": {"d_max": [25.0, 50.0, 100.0], "t_min": [180.0, 300.0, 600.0]},
            "cbsmot": {"area_radius": [25.0, 50.0, 100.0], "min_time": [180.0, 300.0, 600.0]},
        }
    )
    dstar_candidates: int = 10
    dstar_ranges: dict = field(
        default_factory=lambda: {
            "radius": [20.0, 150.0],
            "min_time": [120.0, 900.0],
            "outlier_tolerance": [0, 3],
            "merge_gap": [0.0, 600.0],
        }
    )


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: TrainingConfig = field(default_factory=TrainingConfig)
    finetune: TrainingConfig = field(default_factory=lambda: TrainingConfig(ssl=False))
    tmd: TrainingConfig = field(default_factory=TrainingConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    folds: int = 5
    seed: int = 0
    output_dir: str = "staykit-out"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "PipelineConfig":
        m = self.model
        if m.d_model <= 0 or m.num_heads <= 0 or m.d_model % m.num_heads:
            raise ConfigValidationError("model.d_model must be a positive multiple of model.num_heads")
        if m.num_layers < 1 or m.d_ff < 1 or m.seq_len < 2:
            raise ConfigValidationError("model.num_layers, model.d_ff and model.seq_len must be positive")
        if not 0 <= m.dropout < 1:
            raise ConfigValidationError("model.dropout must lie in [0, 1)")
        for name in ("pretrain", "finetune", "tmd"):
            t = getattr(self, name)
            if t.epochs < 0 or t.lr <= 0 or t.batch_size < 1 or t.weight_decay < 0:
                raise ConfigValidationError(f"{name}: epochs, lr, batch_size and weight_decay out of range")
            if t.lambda_vel < 0 or t.lambda_ang < 0:
                raise ConfigValidationError(f"{name}: forecast weights must be non-negative")
        if self.folds < 2:
            raise ConfigValidationError("folds must be at least 2")
        if self.data.max_gap <= 0 or self.data.max_speed <= 0 or self.data.interpolation_rate <= 0:
            raise ConfigValidationError("data.max_gap, data.max_speed and data.interpolation_rate must be positive")
        for level, size in self.labeling.box_sizes.items():
            if float(size) <= 0:
                raise ConfigValidationError(f"labeling.box_sizes.{level} must be positive")
        if isinstance(self.data.osm_geojson, str):
            self.data.osm_geojson = [self.data.osm_geojson]
        return self


def _build(cls, values: dict, path: str):
    if not isinstance(values, dict):
        raise ConfigValidationError(f"{path or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigValidationError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in values.items():
        sub = _nested_type(cls, name)
        key = f"{path}.{name}" if path else name
        if sub is not None:
            kwargs[name] = _build(sub, value or {}, key)
        else:
            kwargs[name] = _coerce(getattr(cls(), name), value, key)
    return cls(**kwargs)


def _coerce(default, value, key):
    """Match the type of the field's default (YAML reads ``1e-3`` as text)."""
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError
            return value
        if isinstance(default, float) and not isinstance(value, bool):
            return float(value)
        if isinstance(default, int) and not isinstance(value, bool):
            if float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
    except (TypeError, ValueError):
        raise ConfigValidationError(f"{key}: expected {type(default).__name__}, got {value!r}") from None
    return value


def _nested_type(cls, name):
    default = cls()
    value = getattr(default, name)
    return type(value) if dataclasses.is_dataclass(value) else None


def parse_override(text: str) -> tuple[list[str], Any]:
    """``'pretrain.lr=1e-3'`` -> ``(['pretrain', 'lr'], 0.001)`` (values parsed as YAML)."""
    if "=" not in text:
        raise ConfigValidationError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(values: dict, overrides) -> dict:
    for text in overrides or ():
        keys, value = parse_override(text)
        node = values
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigValidationError(f"override {text!r} descends into a scalar")
        node[keys[-1]] = value
    return values


def load_config(path=None, overrides=None) -> PipelineConfig:
    values: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigValidationError(f"{path}: {exc}") from exc
        values = loaded or {}
    values = apply_overrides(values, overrides)
    try:
        cfg = _build(PipelineConfig, values, "")
    except TypeError as exc:
        raise ConfigValidationError(str(exc)) from exc
    return cfg.validate()


def dump_config(cfg: PipelineConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
