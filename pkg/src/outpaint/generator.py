"""Full generator: encoder, bottleneck extrapolator, decoder."""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn

from .backbone import Decoder, Encoder
from .config import ModelConfig
from .errors import ShapeError
from .extrapolator import FeatureExtrapolator


class GeneratorOutput(NamedTuple):
    pred: torch.Tensor        # (B, H_out, W_out, 3) in (-1, 1)
    f_cen: torch.Tensor       # extrapolator output, center block
    enc_center: torch.Tensor  # encoder bottleneck of the center image


def init_parameters(module: nn.Module) -> None:
    """Truncated-normal (std 0.02) weights, zero biases; LayerNorm stays
    at identity scale/shift."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LSTM):
            for name, p in m.named_parameters():
                if name.startswith("weight"):
                    nn.init.trunc_normal_(p, std=0.02)
                else:
                    nn.init.zeros_(p)
    for name, p in module.named_parameters():
        if name.endswith("bias_table"):
            nn.init.trunc_normal_(p, std=0.02)


class Generator(nn.Module):
    """Maps a masked full image plus its center crop to the full predicted
    image. ``steps`` > 1 extrapolates further outward at inference, growing
    the output by one margin per extra step."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg.patch, cfg.embed_dim, cfg.depths,
                               cfg.heads, cfg.window)
        self.extrapolator = FeatureExtrapolator(cfg.bottleneck_channels,
                                                cfg.bottleneck_heads, cfg.ring)
        self.decoder = Decoder(cfg.patch, cfg.embed_dim, cfg.depths,
                               cfg.heads, cfg.window,
                               cfg.center_h, cfg.center_w)
        init_parameters(self)

    def forward(self, masked: torch.Tensor, center: torch.Tensor,
                steps: int = 1) -> GeneratorOutput:
        geom = self.cfg.geometry(steps)
        if masked.shape[1:3] != (geom.h_full, geom.w_full):
            raise ShapeError(
                f"masked image is {tuple(masked.shape[1:3])}, expected "
                f"{(geom.h_full, geom.w_full)} for steps={steps}")
        if center.shape[1:3] != (geom.h, geom.w):
            raise ShapeError(
                f"center image is {tuple(center.shape[1:3])}, expected "
                f"{(geom.h, geom.w)}")
        skips, _ = self.encoder(masked)
        _, enc_center = self.encoder(center)
        feat = self.extrapolator(enc_center, steps)
        grow = self.cfg.ring * steps
        hc, wc = enc_center.shape[1], enc_center.shape[2]
        f_cen = feat[:, grow:grow + hc, grow:grow + wc, :]
        pred = self.decoder(feat, skips)
        return GeneratorOutput(pred=pred, f_cen=f_cen, enc_center=enc_center)
