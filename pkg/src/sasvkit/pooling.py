"""Temporal pooling layers that turn [B, C, T] feature maps into fixed vectors."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .exceptions import ConfigError

STD_FLOOR = 1e-5


def statistics_pooling(x: torch.Tensor, floor: float = STD_FLOOR) -> torch.Tensor:
    """Per-channel mean and population std over the last axis, concatenated."""
    mean = x.mean(dim=-1)
    var = ((x - mean.unsqueeze(-1)) ** 2).mean(dim=-1)
    std = torch.sqrt(var.clamp(min=floor * floor))
    return torch.cat([mean, std], dim=-1)


class StatsPool(nn.Module):
    def forward(self, x):
        return statistics_pooling(x)


@dataclass(frozen=True)
class MQMHAConfig:
    n_queries: int = 2
    n_heads: int = 4
    hidden_dim: int = 128
    # "concat" = [mean_q1 | std_q1 | mean_q2 | std_q2 ...], each block ordered by head
    output: str = "concat"

    def __post_init__(self):
        for name in ("n_queries", "n_heads", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"mqmha.{name}", "must be >= 1")
        if self.output != "concat":
            raise ConfigError("mqmha.output", f"unsupported output rule {self.output!r}")

    def to_dict(self):
        return asdict(self)


class MQMHAPooling(nn.Module):
    """Multi-query multi-head attentive statistics pooling.

    Channels are split into ``n_heads`` groups.  Every (query, head) pair owns
    a one-hidden-layer tanh scorer that yields softmax weights over time for
    its channel group; the weighted mean and weighted std of that group are
    the pair's statistics.  Output length is ``2 * channels * n_queries``.
    """

    def __init__(self, channels: int, cfg: MQMHAConfig = MQMHAConfig(), uniform_init: bool = False):
        super().__init__()
        if channels % cfg.n_heads:
            raise ConfigError("mqmha.n_heads", f"{channels} channels are not divisible by {cfg.n_heads} heads")
        self.channels = channels
        self.cfg = cfg
        q, h, k, d = cfg.n_queries, cfg.n_heads, cfg.hidden_dim, channels // cfg.n_heads
        self.w1 = nn.Parameter(torch.randn(q, h, k, d) / d**0.5)
        self.b1 = nn.Parameter(torch.zeros(q, h, k))
        self.w2 = nn.Parameter(torch.randn(q, h, k) / k**0.5)
        self.b2 = nn.Parameter(torch.zeros(q, h))
        if uniform_init:
            with torch.no_grad():
                self.w2.zero_()

    @property
    def output_dim(self) -> int:
        return 2 * self.channels * self.cfg.n_queries

    def _split(self, x):
        b, c, t = x.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        return x.reshape(b, self.cfg.n_heads, c // self.cfg.n_heads, t)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Attention weights [B, queries, heads, T]; each row sums to one."""
        xh = self._split(x)
        hidden = torch.tanh(torch.einsum("qhkd,bhdt->bqhkt", self.w1, xh) + self.b1[None, :, :, :, None])
        logits = torch.einsum("qhk,bqhkt->bqht", self.w2, hidden) + self.b2[None, :, :, None]
        return torch.softmax(logits, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b = x.shape[0]
        xh = self._split(x).unsqueeze(1)  # [B, 1, H, D, T]
        alpha = self.attention(x).unsqueeze(3)  # [B, Q, H, 1, T]
        mean = (alpha * xh).sum(dim=-1)
        var = (alpha * (xh - mean.unsqueeze(-1)) ** 2).sum(dim=-1)
        std = torch.sqrt(var.clamp(min=STD_FLOOR * STD_FLOOR))
        q = self.cfg.n_queries
        stats = torch.cat([mean.reshape(b, q, -1), std.reshape(b, q, -1)], dim=-1)
        return stats.reshape(b, -1)
