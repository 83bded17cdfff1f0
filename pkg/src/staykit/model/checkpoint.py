"""Self-describing binary checkpoints.

Layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON header, then
raw little-endian row-major tensor data at the offsets listed in the header.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..trajectory import StandardizationStats
from .encoder import EncoderConfig
from .heads import StayModel

MAGIC = b"STAYKIT\x01"
FORMAT = "staykit-checkpoint/1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: StayModel
    stats: StandardizationStats | None = None
    label_means: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, model: StayModel, stats=None, label_means=None, extra=None) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy().astype("<f4"))
        blob = arr.tobytes(order="C")
        tensors.append({"name": name, "dtype": "float32", "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": FORMAT,
        "encoder": model.config.to_dict(),
        "num_modes": model.num_modes,
        "stats": None if stats is None else stats.to_dict(),
        "label_means": label_means or {},
        "extra": extra or {},
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a staykit checkpoint")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + n].decode("utf-8"))
    if header.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")
    base = 16 + n
    model = StayModel(EncoderConfig(**header["encoder"]), header["num_modes"])
    state = {}
    for t in header["tensors"]:
        start = base + t["offset"]
        arr = np.frombuffer(raw[start : start + t["nbytes"]], dtype="<f4").reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    stats = StandardizationStats(**header["stats"]) if header["stats"] else None
    return Checkpoint(model, stats, header["label_means"], header["extra"])
