"""Transformer encoder over ``[x, y, dt, v]`` point sequences."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 512
    num_layers: int = 6
    num_heads: int = 8
    d_ff: int = 2048
    dropout: float = 0.1
    seed: int = 0
    n_features: int = 4

    def __post_init__(self):
        for name in ("d_model", "num_layers", "num_heads", "d_ff", "n_features"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.num_heads:
            raise ConfigError("d_model must be divisible by num_heads")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")

    @classmethod
    def small(cls, **kw) -> "EncoderConfig":
        """Desk-scale configuration."""
        base = dict(d_model=64, num_layers=2, num_heads=4, d_ff=256)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_encoding(n: int, d_model: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d_model)
    pe = torch.zeros(n, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return pe.to(dtype)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d_model: int, num_heads: int, dropout: float = 0.0):
        super().__init__()
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.query = nn.Linear(d_model, d_model)
        self.key = nn.Linear(d_model, d_model)
        self.value = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        h, dh = self.num_heads, self.d_head
        q = self.query(x).view(b, n, h, dh).transpose(1, 2)
        k = self.key(x).view(b, n, h, dh).transpose(1, 2)
        v = self.value(x).view(b, n, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(dh)
        # padded keys are never attended to
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, n, d)
        # padded queries attend to nothing
        return self.out(ctx) * mask[..., None]


class EncoderLayer(nn.Module):
    """Post-norm self-attention block with a ReLU feed-forward sublayer."""

    def __init__(self, d_model: int, num_heads: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.attention = MultiHeadSelfAttention(d_model, num_heads, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.feedforward = nn.Sequential(nn.Linear(d_model, d_ff), nn.ReLU(), nn.Linear(d_ff, d_model))
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attention(x, mask)))
        x = self.norm2(x + self.dropout(self.feedforward(x)))
        return x * mask[..., None]


class TransformerEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.input_projection = nn.Linear(config.n_features, config.d_model)
        self.dropout = nn.Dropout(config.dropout)
        self.layers = nn.ModuleList(
            EncoderLayer(config.d_model, config.num_heads, config.d_ff, config.dropout)
            for _ in range(config.num_layers)
        )
        self._pe_cache: dict = {}

    def positional_encoding(self, n, dtype, device):
        key = (n, dtype, device)
        if key not in self._pe_cache:
            self._pe_cache[key] = sinusoidal_encoding(n, self.config.d_model, dtype).to(device)
        return self._pe_cache[key]

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """``(B, n, 4)`` features and ``(B, n)`` bool mask -> ``(B, n, d_model)``."""
        if not torch.isfinite(x).all():
            raise ValueError("encoder input contains non-finite values")
        if mask is None:
            mask = torch.ones(x.shape[:2], dtype=torch.bool, device=x.device)
        d = self.config.d_model
        h = self.input_projection(x) * math.sqrt(d)
        h = h + self.positional_encoding(x.shape[1], h.dtype, h.device)
        h = self.dropout(h) * mask[..., None]
        for layer in self.layers:
            h = layer(h, mask)
        return h
