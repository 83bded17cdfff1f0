"""Point decoders, forecasting heads and the assembled sequence labeller."""
from __future__ import annotations

import torch
from torch import nn

from .encoder import EncoderConfig, TransformerEncoder

NUM_MODES = 5
MODE_NAMES = ("walk", "bike", "bus", "car", "train")


class StayDecoder(nn.Module):
    """Per-point stay probability."""

    def __init__(self, d_model: int):
        super().__init__()
        self.linear = nn.Linear(d_model, 1)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.linear(emb)).squeeze(-1)


class ModeDecoder(nn.Module):
    """Per-point distribution over ``num_modes`` transport modes."""

    def __init__(self, d_model: int, num_modes: int = NUM_MODES):
        super().__init__()
        self.linear = nn.Linear(d_model, num_modes)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.linear(emb), dim=-1)


def aggregate(emb: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Concatenate the masked mean and the last real embedding of each sequence."""
    m = mask.to(emb.dtype)
    count = m.sum(dim=1, keepdim=True).clamp_min(1.0)
    mean = (emb * m[..., None]).sum(dim=1) / count
    positions = torch.arange(mask.shape[1], device=mask.device).expand_as(mask)
    last_idx = torch.where(mask, positions, torch.zeros_like(positions)).max(dim=1).values
    last = emb[torch.arange(emb.shape[0], device=emb.device), last_idx]
    return torch.cat([mean, last], dim=-1)


class ForecastHeads(nn.Module):
    """Next-step velocity and bearing (sine, cosine) from the pooled sequence embedding."""

    def __init__(self, d_model: int):
        super().__init__()
        self.velocity = nn.Linear(2 * d_model, 1)
        self.angle = nn.Linear(2 * d_model, 2)

    def forward(self, emb: torch.Tensor, mask: torch.Tensor):
        agg = aggregate(emb, mask)
        v_hat = self.velocity(agg).squeeze(-1)
        sin_cos = torch.tanh(self.angle(agg))
        return v_hat, sin_cos[..., 0], sin_cos[..., 1]


class StayModel(nn.Module):
    """Encoder plus a stay decoder (``num_modes=None``) or a mode decoder, plus forecast heads."""

    def __init__(self, config: EncoderConfig, num_modes: int | None = None):
        super().__init__()
        self.config = config
        self.num_modes = num_modes
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.encoder = TransformerEncoder(config)
            self.decoder = StayDecoder(config.d_model) if num_modes is None else ModeDecoder(config.d_model, num_modes)
            self.ssl = ForecastHeads(config.d_model)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None):
        if mask is None:
            mask = torch.ones(x.shape[:2], dtype=torch.bool, device=x.device)
        emb = self.encoder(x, mask)
        return self.decoder(emb), emb
