"""Windowed-attention encoder/decoder backbone.

Feature maps are kept channels-last (B, H, W, C) throughout. Attention is
restricted to non-overlapping M x M windows; the shifted variant offsets
the window grid by floor(M/2) via top/left zero padding (padded cells are
masked out of the softmax rather than cyclically wrapped).
"""
from __future__ import annotations

import math
from typing import List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

NEG_INF = -1e9


def window_partition(x: torch.Tensor, window: int, shift: int = 0):
    """Pad to window multiples and cut into non-overlapping windows.

    Pads top/left by ``shift`` and bottom/right up to the next multiple of
    ``window``. Returns ``(windows, key_valid, pads)`` where windows is
    (B * nWin, window*window, C), key_valid is a boolean map of the real
    (non-padded) cells, and ``pads`` lets window_reverse restore the
    original extent exactly.
    """
    b, h, w, c = x.shape
    top = left = int(shift)
    hp = -(-(h + top) // window) * window
    wp = -(-(w + left) // window) * window
    pad = (0, 0, left, wp - w - left, top, hp - h - top)
    xp = F.pad(x, pad)
    valid = F.pad(x.new_ones(b, h, w, 1), pad)

    def cut(t):
        ch = t.shape[-1]
        t = t.view(b, hp // window, window, wp // window, window, ch)
        return t.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, ch)

    return cut(xp), cut(valid).squeeze(-1) > 0.5, (top, left, hp, wp)


def window_reverse(windows: torch.Tensor, window: int, pads, batch: int,
                   height: int, width: int) -> torch.Tensor:
    """Exact inverse of :func:`window_partition` on the unpadded extent."""
    top, left, hp, wp = pads
    c = windows.shape[-1]
    x = windows.view(batch, hp // window, wp // window, window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(batch, hp, wp, c)
    return x[:, top:top + height, left:left + width, :]


def relative_position_index(window: int) -> torch.Tensor:
    """(M^2, M^2) lookup from token-pair coordinate offsets into the bias table."""
    coords = torch.stack(torch.meshgrid(
        torch.arange(window), torch.arange(window), indexing="ij"))
    flat = coords.flatten(1)                              # (2, M^2)
    rel = flat[:, :, None] - flat[:, None, :]             # (2, M^2, M^2)
    return (rel[0] + window - 1) * (2 * window - 1) + (rel[1] + window - 1)


def relative_position_bias(table: torch.Tensor, window: int) -> torch.Tensor:
    """Expand a ((2M-1)^2, heads) table into per-head (heads, M^2, M^2) bias."""
    n = window * window
    if table.shape[0] != (2 * window - 1) ** 2:
        raise ShapeError(
            f"bias table has {table.shape[0]} entries, expected {(2 * window - 1) ** 2}"
        )
    idx = relative_position_index(window).to(table.device)
    return table[idx.reshape(-1)].reshape(n, n, -1).permute(2, 0, 1)


def scaled_dot_attention(q, k, v, bias=None, key_valid=None):
    """SoftMax(Q K^T / sqrt(d) + bias) V with invalid keys masked out.

    q, k, v: (..., N, d); bias broadcastable to (..., N, N); key_valid a
    boolean (..., N). Rows with no valid key at all produce zeros.
    """
    d = q.shape[-1]
    logits = q @ k.transpose(-2, -1) / math.sqrt(d)
    if bias is not None:
        logits = logits + bias
    if key_valid is not None:
        logits = logits.masked_fill(~key_valid.unsqueeze(-2), NEG_INF)
    attn = logits.softmax(dim=-1)
    if key_valid is not None:
        has_key = key_valid.any(dim=-1)[..., None, None].to(attn.dtype)
        attn = attn * has_key
    return attn @ v


class WindowAttention(nn.Module):
    """Multi-head self-attention within M x M windows with learned
    relative-position bias, optionally on a shifted window grid."""

    def __init__(self, dim: int, num_heads: int, window: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ShapeError(f"dim={dim} not divisible by heads={num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.window = window
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.bias_table = nn.Parameter(
            torch.zeros((2 * window - 1) ** 2, num_heads))

    def forward(self, x: torch.Tensor, shift: int = 0) -> torch.Tensor:
        b, h, w, c = x.shape
        windows, valid, pads = window_partition(x, self.window, shift)
        bw, n, _ = windows.shape
        hd = c // self.num_heads
        qkv = self.qkv(windows).reshape(bw, n, 3, self.num_heads, hd)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        bias = relative_position_bias(self.bias_table, self.window).unsqueeze(0)
        out = scaled_dot_attention(q, k, v, bias, valid.unsqueeze(1))
        out = out.transpose(1, 2).reshape(bw, n, c)
        return window_reverse(self.proj(out), self.window, pads, b, h, w)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden_ratio: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * hidden_ratio)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim * hidden_ratio, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class WindowBlock(nn.Module):
    """One pre-norm transformer block: windowed attention then MLP, each
    behind a residual connection. ``shift`` > 0 selects the shifted grid."""

    def __init__(self, dim: int, num_heads: int, window: int, shift: int):
        super().__init__()
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim, eps=1e-5)
        self.attn = WindowAttention(dim, num_heads, window)
        self.norm2 = nn.LayerNorm(dim, eps=1e-5)
        self.mlp = Mlp(dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x), self.shift)
        x = x + self.mlp(self.norm2(x))
        return x


class WindowStage(nn.Module):
    """An even-depth run of blocks alternating plain and shifted windows."""

    def __init__(self, dim: int, num_heads: int, window: int, depth: int):
        super().__init__()
        if depth % 2 != 0:
            raise ShapeError(f"stage depth must be even, got {depth}")
        self.blocks = nn.ModuleList([
            WindowBlock(dim, num_heads, window,
                        shift=0 if i % 2 == 0 else window // 2)
            for i in range(depth)
        ])

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class PatchEmbed(nn.Module):
    """Flatten each patch x patch x 3 pixel block and project it to dim."""

    def __init__(self, patch: int, dim: int, in_channels: int = 3):
        super().__init__()
        self.patch = patch
        self.in_channels = in_channels
        self.proj = nn.Linear(patch * patch * in_channels, dim)

    def forward(self, x):
        b, h, w, c = x.shape
        p = self.patch
        if h % p != 0 or w % p != 0:
            raise ShapeError(f"{h}x{w} not divisible by patch size {p}")
        x = x.view(b, h // p, p, w // p, p, c)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, h // p, w // p, p * p * c)
        return self.proj(x)


def tokens_to_pixels(x: torch.Tensor, patch: int, channels: int = 3) -> torch.Tensor:
    """Inverse layout of PatchEmbed's flattening: (B, Hg, Wg, p*p*c) -> pixels."""
    b, hg, wg, d = x.shape
    p = patch
    if d != p * p * channels:
        raise ShapeError(f"token dim {d} != patch^2 * channels = {p * p * channels}")
    x = x.view(b, hg, wg, p, p, channels)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, hg * p, wg * p, channels)


class PatchMerge(nn.Module):
    """2x spatial downsample: concat each 2x2 token group (order TL, TR,
    BL, BR) and project 4C -> 2C."""

    def __init__(self, dim: int):
        super().__init__()
        self.reduction = nn.Linear(4 * dim, 2 * dim)

    def forward(self, x):
        b, h, w, c = x.shape
        if h % 2 != 0 or w % 2 != 0:
            raise ShapeError(f"cannot merge odd-sized map {h}x{w}")
        x = x.view(b, h // 2, 2, w // 2, 2, c)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, h // 2, w // 2, 4 * c)
        return self.reduction(x)


class PatchExpand(nn.Module):
    """2x spatial upsample: project C -> 2C, then scatter the four C/2
    channel groups into a 2x2 block (exact spatial inverse of PatchMerge)."""

    def __init__(self, dim: int):
        super().__init__()
        if dim % 2 != 0:
            raise ShapeError(f"expand needs an even channel count, got {dim}")
        self.expansion = nn.Linear(dim, 2 * dim)

    def forward(self, x):
        b, h, w, c = x.shape
        out_c = c // 2
        x = self.expansion(x).view(b, h, w, 2, 2, out_c)
        return x.permute(0, 1, 3, 2, 4, 5).reshape(b, 2 * h, 2 * w, out_c)


def skip_fuse(fe: torch.Tensor, fd: torch.Tensor, center_h: int,
              center_w: int) -> torch.Tensor:
    """Average encoder and decoder features on the centered block only.

    Outside the center block the decoder feature passes through untouched.
    """
    if fe.shape != fd.shape:
        raise ShapeError(f"skip shapes differ: {tuple(fe.shape)} vs {tuple(fd.shape)}")
    _, h, w, _ = fd.shape
    if center_h > h or center_w > w or (h - center_h) % 2 or (w - center_w) % 2:
        raise ShapeError(
            f"center {center_h}x{center_w} does not sit centrally in {h}x{w}")
    oy, ox = (h - center_h) // 2, (w - center_w) // 2
    out = fd.clone()
    out[:, oy:oy + center_h, ox:ox + center_w, :] = (
        fe[:, oy:oy + center_h, ox:ox + center_w, :]
        + fd[:, oy:oy + center_h, ox:ox + center_w, :]
    ) / 2
    return out


class Encoder(nn.Module):
    """Patch embedding followed by window stages with 2x merges between.

    Resolution-polymorphic: the same parameters run on any input whose
    sides are divisible by the total downsample factor.
    """

    def __init__(self, patch: int, embed_dim: int, depths: Sequence[int],
                 heads: Sequence[int], window: int):
        super().__init__()
        if len(depths) != len(heads):
            raise ShapeError("depths and heads must have equal length")
        self.embed = PatchEmbed(patch, embed_dim)
        dims = [embed_dim * (2 ** i) for i in range(len(depths))]
        self.stages = nn.ModuleList([
            WindowStage(dims[i], heads[i], window, depths[i])
            for i in range(len(depths))
        ])
        self.merges = nn.ModuleList([
            PatchMerge(dims[i]) for i in range(len(depths) - 1)
        ])

    def forward(self, x: torch.Tensor) -> Tuple[List[torch.Tensor], torch.Tensor]:
        """Returns (per-stage features kept for skip fusion, bottleneck)."""
        z = self.embed(x)
        feats: List[torch.Tensor] = []
        for i, stage in enumerate(self.stages):
            z = stage(z)
            if i < len(self.merges):
                feats.append(z)
                z = self.merges[i](z)
        return feats, z


class Decoder(nn.Module):
    """Mirror of the encoder: stages with 2x expands between, fusing the
    matching encoder feature on the center block before each stage, then a
    linear projection back to pixels through tanh."""

    def __init__(self, patch: int, embed_dim: int, depths: Sequence[int],
                 heads: Sequence[int], window: int,
                 center_h: int, center_w: int):
        super().__init__()
        n = len(depths)
        self.patch = patch
        self.center_h = center_h
        self.center_w = center_w
        dims = [embed_dim * (2 ** i) for i in range(n)]
        rev = list(reversed(range(n)))
        self.stages = nn.ModuleList([
            WindowStage(dims[i], heads[i], window, depths[i]) for i in rev
        ])
        self.expands = nn.ModuleList([
            PatchExpand(dims[i]) for i in reversed(range(1, n))
        ])
        # cumulative pixel downsample of each fused (post-expand) level
        self.fuse_downsamples = [patch * (2 ** i) for i in reversed(range(n - 1))]
        self.out_proj = nn.Linear(embed_dim, patch * patch * 3)

    def forward(self, bottleneck: torch.Tensor,
                skips: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(skips) != len(self.expands):
            raise ShapeError(
                f"expected {len(self.expands)} skip features, got {len(skips)}")
        z = self.stages[0](bottleneck)
        for i, expand in enumerate(self.expands):
            z = expand(z)
            ds = self.fuse_downsamples[i]
            z = skip_fuse(skips[len(skips) - 1 - i], z,
                          self.center_h // ds, self.center_w // ds)
            z = self.stages[i + 1](z)
        return torch.tanh(tokens_to_pixels(self.out_proj(z), self.patch))
