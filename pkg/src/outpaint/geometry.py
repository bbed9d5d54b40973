"""Masking arithmetic: pixel-space sizes and their feature-grid images.

A sample is a full image of size (h + 2m) x (w + 2m) whose centered h x w
block is known and whose surrounding ring of width m is to be synthesized.
The encoder reduces spatial resolution by a fixed integer factor, so every
pixel-space quantity here has an exact feature-grid counterpart.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch

from .errors import GeometryError, ShapeError


@dataclass(frozen=True)
class OutpaintGeometry:
    """Center size, per-side margin, and the encoder's total downsample.

    Invariants: full sizes are h + 2m and w + 2m exactly, and h, w, m and
    the full sizes are all divisible by ``downsample`` so the margin maps
    to whole feature rows/columns.
    """

    h: int
    w: int
    m: int
    downsample: int

    def __post_init__(self):
        if self.h <= 0 or self.w <= 0:
            raise GeometryError(f"center size must be positive, got {self.h}x{self.w}")
        if self.m < 0:
            raise GeometryError(f"margin must be non-negative, got {self.m}")
        if self.downsample <= 0:
            raise GeometryError(f"downsample must be positive, got {self.downsample}")
        for name, value in (("h", self.h), ("w", self.w), ("m", self.m)):
            if value % self.downsample != 0:
                raise GeometryError(
                    f"{name}={value} is not divisible by downsample={self.downsample}"
                )

    @property
    def h_full(self) -> int:
        return self.h + 2 * self.m

    @property
    def w_full(self) -> int:
        return self.w + 2 * self.m

    def scaled(self, steps: int) -> "OutpaintGeometry":
        """Geometry for a ``steps``-step extrapolation (margin grows per step)."""
        if steps < 1:
            raise GeometryError(f"steps must be >= 1, got {steps}")
        return OutpaintGeometry(self.h, self.w, steps * self.m, self.downsample)


class FeatureGrid(NamedTuple):
    grid_h: int
    grid_w: int
    center_h: int
    center_w: int
    ring: int


class MaskedSample(NamedTuple):
    """One training/inference sample in normalized [-1, 1] image space.

    ``mask`` is 1 exactly on the ring to be predicted, 0 on the center
    block; ``masked_image`` equals ``ground_truth`` on the center block.
    """

    masked_image: torch.Tensor  # (B, h_full, w_full, 3)
    mask: torch.Tensor          # (h_full, w_full)
    ground_truth: torch.Tensor  # (B, h_full, w_full, 3)


def feature_grid(geom: OutpaintGeometry) -> FeatureGrid:
    """Sizes of the bottleneck feature map implied by the geometry."""
    ds = geom.downsample
    return FeatureGrid(
        grid_h=geom.h_full // ds,
        grid_w=geom.w_full // ds,
        center_h=geom.h // ds,
        center_w=geom.w // ds,
        ring=geom.m // ds,
    )


def ring_mask(geom: OutpaintGeometry, dtype=torch.float32) -> torch.Tensor:
    """Binary (h_full, w_full) map, 1 on the ring, 0 on the center block."""
    mask = torch.ones(geom.h_full, geom.w_full, dtype=dtype)
    mask[geom.m:geom.m + geom.h, geom.m:geom.m + geom.w] = 0.0
    return mask


def make_masked_input(ground_truth: torch.Tensor, geom: OutpaintGeometry,
                      fill: float = 0.0) -> MaskedSample:
    """Fill the ring of ``ground_truth`` with ``fill``, keeping the center.

    ``ground_truth`` is (B, h_full, w_full, 3); the center block is copied
    verbatim and everything else set to the fill value.
    """
    if ground_truth.ndim != 4 or ground_truth.shape[-1] != 3:
        raise ShapeError(f"expected (B, H, W, 3) image, got {tuple(ground_truth.shape)}")
    _, hh, ww, _ = ground_truth.shape
    if (hh, ww) != (geom.h_full, geom.w_full):
        raise GeometryError(
            f"image is {hh}x{ww} but geometry expects {geom.h_full}x{geom.w_full}"
        )
    mask = ring_mask(geom, dtype=ground_truth.dtype)
    keep = (1.0 - mask).unsqueeze(0).unsqueeze(-1)
    masked = ground_truth * keep + fill * (1.0 - keep)
    return MaskedSample(masked_image=masked, mask=mask, ground_truth=ground_truth)


def center_crop(image: torch.Tensor, geom: OutpaintGeometry) -> torch.Tensor:
    """The h x w center block of a (B, h_full, w_full, C) tensor."""
    return image[:, geom.m:geom.m + geom.h, geom.m:geom.m + geom.w, :]


def composite_center(pred: torch.Tensor, center: torch.Tensor,
                     geom: OutpaintGeometry) -> torch.Tensor:
    """Overwrite the predicted center block with the given center pixels."""
    if center.shape[1:3] != (geom.h, geom.w):
        raise GeometryError(
            f"center is {tuple(center.shape[1:3])} but geometry expects {(geom.h, geom.w)}"
        )
    out = pred.clone()
    out[:, geom.m:geom.m + geom.h, geom.m:geom.m + geom.w, :] = center
    return out
