"""Recurrent bottleneck extrapolator.

Grows the center feature map outward ring by ring: each height-1 (or
width-1) strip of the map is treated as a token sequence, a shared 2-layer
LSTM autoregresses new tokens past both ends, and every newly created
strip is then regulated by attending over itself and its immediate
neighbor strips. One horizontal pass then one vertical pass widen the map
by ``ring`` cells per side and per step, so ``steps`` applications turn an
Hc x Wc map into (Hc + 2*steps*ring) x (Wc + 2*steps*ring).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Literal

import torch
import torch.nn as nn

from .backbone import scaled_dot_attention
from .errors import ShapeError

Orientation = Literal["row", "column"]


@dataclass
class FeatureBar:
    """A single height-1 or width-1 strip of a feature map."""

    tokens: torch.Tensor  # (B, length, C)
    orientation: Orientation
    index: int


def decompose_bars(x: torch.Tensor, orientation: Orientation) -> List[FeatureBar]:
    """Split (B, H, W, C) into H row bars or W column bars."""
    if x.ndim != 4:
        raise ShapeError(f"expected (B, H, W, C), got {tuple(x.shape)}")
    if orientation == "row":
        return [FeatureBar(x[:, i, :, :], "row", i) for i in range(x.shape[1])]
    if orientation == "column":
        return [FeatureBar(x[:, :, j, :], "column", j) for j in range(x.shape[2])]
    raise ShapeError(f"unknown orientation {orientation!r}")


def assemble_bars(bars: List[FeatureBar], orientation: Orientation) -> torch.Tensor:
    """Exact inverse of :func:`decompose_bars` for index-ordered bars."""
    ordered = sorted(bars, key=lambda b: b.index)
    stacked = torch.stack([b.tokens for b in ordered], dim=1)
    if orientation == "row":
        return stacked
    return stacked.transpose(1, 2)


class ContextAttention(nn.Module):
    """Multi-head attention of new tokens over their local context bars."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ShapeError(f"dim={dim} not divisible by heads={num_heads}")
        self.num_heads = num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, nq, c = query.shape
        nk = context.shape[1]
        hd = c // self.num_heads

        def split(t, n):
            return t.view(b, n, self.num_heads, hd).transpose(1, 2)

        q = split(self.q_proj(query), nq)
        k = split(self.k_proj(context), nk)
        v = split(self.v_proj(context), nk)
        out = scaled_dot_attention(q, k, v)
        return self.out_proj(out.transpose(1, 2).reshape(b, nq, c))


def regulate_bar(new_tokens: torch.Tensor, context: torch.Tensor,
                 attn: ContextAttention) -> torch.Tensor:
    """Residually refine predicted tokens against their spatial context.

    Queries are the new tokens; keys/values are all context tokens (the new
    bar itself plus its <=1-distant neighbors).
    """
    if context.shape[1] == 0:
        raise ShapeError("regulation context must be non-empty")
    return new_tokens + attn(new_tokens, context)


class FeatureExtrapolator(nn.Module):
    """Grows a bottleneck feature map outward on all four sides.

    The center block of the output is the input transformed only by the
    final normalization, which trains it to act as a feature
    self-reconstruction target.
    """

    def __init__(self, channels: int, num_heads: int, ring: int):
        super().__init__()
        if ring < 0:
            raise ShapeError(f"ring must be >= 0, got {ring}")
        self.channels = channels
        self.ring = ring
        self.lstm_h = nn.LSTM(channels, channels, num_layers=2, batch_first=True)
        self.lstm_v = nn.LSTM(channels, channels, num_layers=2, batch_first=True)
        self.out_proj = nn.Linear(channels, channels)
        self.reg_attn = ContextAttention(channels, num_heads)
        self.final_norm = nn.LayerNorm(channels, eps=1e-5)

    def _autoregress(self, seq: torch.Tensor, steps: int,
                     lstm: nn.LSTM) -> torch.Tensor:
        """Run the LSTM over ``seq`` then emit ``steps`` tokens, feeding each
        projected hidden state back in as the next input."""
        if steps == 0:
            return seq.new_zeros(seq.shape[0], 0, seq.shape[2])
        _, state = lstm(seq)
        outs = []
        for j in range(steps):
            token = self.out_proj(state[0][-1])
            outs.append(token)
            if j + 1 < steps:
                _, state = lstm(token.unsqueeze(1), state)
        return torch.stack(outs, dim=1)

    def extend_bar(self, bar: torch.Tensor, steps: int, lstm: nn.LSTM):
        """Extend a (B, L, C) bar by ``steps`` tokens on each end.

        Returns (left_ext, right_ext), each (B, steps, C), ordered from the
        bar outward (first token is adjacent to the bar).
        """
        right = self._autoregress(bar, steps, lstm)
        left = self._autoregress(bar.flip(1), steps, lstm)
        return left, right

    def _widen(self, x: torch.Tensor, lstm: nn.LSTM) -> torch.Tensor:
        """One horizontal widening: every row bar grows by ``ring`` cells on
        both ends and each new column is regulated against its neighbors."""
        b, h, w, c = x.shape
        s = self.ring
        bars = x.reshape(b * h, w, c)
        left, right = self.extend_bar(bars, s, lstm)
        left = left.view(b, h, s, c).flip(2)     # outermost column first
        right = right.view(b, h, s, c)
        wide = torch.cat([left, x, right], dim=2)

        # Regulate each new column against the snapshot of the widened map
        # so bar order cannot matter.
        new_cols = list(range(s)) + list(range(s + w, w + 2 * s))
        regulated = {}
        for col in new_cols:
            neighbors = [j for j in (col - 1, col, col + 1) if 0 <= j < w + 2 * s]
            context = torch.cat([wide[:, :, j, :] for j in neighbors], dim=1)
            regulated[col] = regulate_bar(wide[:, :, col, :], context, self.reg_attn)
        out = wide.clone()
        for col in new_cols:
            out[:, :, col, :] = regulated[col]
        return out

    def _one_step(self, x: torch.Tensor) -> torch.Tensor:
        if self.ring > 0:
            x = self._widen(x, self.lstm_h)
            x = self._widen(x.transpose(1, 2), self.lstm_v).transpose(1, 2)
        return self.final_norm(x)

    def forward(self, x: torch.Tensor, steps: int = 1) -> torch.Tensor:
        if x.ndim != 4 or x.shape[-1] != self.channels:
            raise ShapeError(
                f"expected (B, H, W, {self.channels}), got {tuple(x.shape)}")
        if steps < 1:
            raise ShapeError(f"steps must be >= 1, got {steps}")
        for _ in range(steps):
            x = self._one_step(x)
        return x
