"""Training objectives: pixel and feature reconstruction, implicit-MRF
texture matching, and the relativistic-average least-squares GAN pair."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, TrainingError


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights of the four generator loss terms."""

    rec: float = 20.0
    feat_rec: float = 1.0
    mrf: float = 0.5
    adv: float = 1.0

    def __post_init__(self):
        for name in ("rec", "feat_rec", "mrf", "adv"):
            if getattr(self, name) < 0:
                raise TrainingError(f"loss weight {name} must be >= 0")


def pixel_rec_loss(gt: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    if gt.shape != pred.shape:
        raise ShapeError(f"shape mismatch: {tuple(gt.shape)} vs {tuple(pred.shape)}")
    return (gt - pred).abs().mean()


def feat_rec_loss(f_cen: torch.Tensor, enc_center: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between the extrapolator's passed-through
    center block and the encoder features of the center image."""
    if f_cen.shape != enc_center.shape:
        raise ShapeError(
            f"center feature shapes differ: {tuple(f_cen.shape)} vs "
            f"{tuple(enc_center.shape)} (geometry bug)")
    return (f_cen - enc_center).abs().mean()


def _cosine_similarity_matrix(a: torch.Tensor, b: torch.Tensor,
                              eps: float) -> torch.Tensor:
    # a: (B, Na, C), b: (B, Nb, C); norms clamped so all-zero features
    # stay finite instead of producing NaN.
    an = a / a.norm(dim=-1, keepdim=True).clamp_min(eps)
    bn = b / b.norm(dim=-1, keepdim=True).clamp_min(eps)
    return an @ bn.transpose(1, 2)


def _mrf_scale_loss(feat_fake: torch.Tensor, feat_real: torch.Tensor,
                    bandwidth: float, eps: float) -> torch.Tensor:
    """One scale of the implicit-MRF loss on (B, C, H, W) feature maps.

    Each spatial site is one feature patch. For fake patch v and real
    patch s: relative similarity exp((cos(v,s) / (max_r cos(v,r) + eps))
    / bandwidth), normalized over s; the loss is -log of the mean over s
    of the best fake match.
    """
    if feat_fake.shape != feat_real.shape:
        raise ShapeError("feature scales differ between fake and real")
    fake = feat_fake.flatten(2).transpose(1, 2)
    real = feat_real.flatten(2).transpose(1, 2)
    sim = _cosine_similarity_matrix(fake, real, eps)      # (B, Nf, Nr)
    best = sim.max(dim=2, keepdim=True).values            # per fake patch
    # The denominator can cross zero when every similarity is negative;
    # nudging it and capping the exponent keeps degenerate maps finite
    # without touching well-behaved inputs (exponents stay ~1/bandwidth).
    denom = best + eps
    denom = torch.where(denom == 0, torch.full_like(denom, eps), denom)
    rs = torch.exp(((sim / denom) / bandwidth).clamp(max=60.0))
    rs_bar = rs / rs.sum(dim=2, keepdim=True)
    per_real = rs_bar.max(dim=1).values                   # (B, Nr)
    return (-torch.log(per_real.mean(dim=1))).mean()


def idmrf_loss(fake: torch.Tensor, real: torch.Tensor,
               extractor: Callable[[torch.Tensor], List[torch.Tensor]],
               bandwidth: float = 0.5, eps: float = 1e-5) -> torch.Tensor:
    """Implicit-MRF texture loss summed over extractor scales.

    ``extractor`` maps a (B, H, W, 3) image to a list of (B, C, h, w)
    feature maps; it only needs to be differentiable in its input.
    """
    if fake.shape != real.shape:
        raise ShapeError(f"shape mismatch: {tuple(fake.shape)} vs {tuple(real.shape)}")
    feats_fake = extractor(fake)
    feats_real = extractor(real)
    total = fake.new_zeros(())
    for ff, fr in zip(feats_fake, feats_real):
        total = total + _mrf_scale_loss(ff, fr, bandwidth, eps)
    return total


def ralsgan_losses(scores_real: torch.Tensor,
                   scores_fake: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Relativistic-average least-squares losses (discriminator, generator).

    Each score is compared against the mean score of the opposite class,
    so both losses are invariant to adding a constant to every score.
    """
    if scores_real.numel() == 0 or scores_fake.numel() == 0:
        raise ShapeError("score vectors must be non-empty")
    mean_real = scores_real.mean()
    mean_fake = scores_fake.mean()
    loss_d = ((scores_real - mean_fake - 1) ** 2).mean() + \
             ((scores_fake - mean_real + 1) ** 2).mean()
    loss_g = ((scores_fake - mean_real - 1) ** 2).mean() + \
             ((scores_real - mean_fake + 1) ** 2).mean()
    return loss_d, loss_g


def total_generator_loss(rec: torch.Tensor, feat_rec: torch.Tensor,
                         mrf: torch.Tensor, adv: torch.Tensor,
                         weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the four generator terms; rejects non-finite parts."""
    parts = {"rec": rec, "feat_rec": feat_rec, "mrf": mrf, "adv": adv}
    for name, value in parts.items():
        if not torch.isfinite(value).all():
            raise TrainingError(f"loss term '{name}' is not finite: {value}")
    return (weights.rec * rec + weights.feat_rec * feat_rec
            + weights.mrf * mrf + weights.adv * adv)


class FixedFeatureExtractor(nn.Module):
    """Frozen, seeded strided-conv stack standing in for a pretrained
    feature network; returns the activations at two scales.

    Deterministic given the seed, never trained; alternative weights can
    be loaded from a checkpoint container via the ``extractor_weights``
    config key.
    """

    def __init__(self, seed: int = 0, channels: Sequence[int] = (16, 32, 64, 96),
                 taps: Sequence[int] = (1, 2)):
        super().__init__()
        if len(taps) < 2:
            raise ShapeError("extractor must expose at least two scales")
        self.taps = tuple(taps)
        convs = []
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            in_c = 3
            for out_c in channels:
                conv = nn.Conv2d(in_c, out_c, kernel_size=3, stride=2, padding=1)
                nn.init.kaiming_normal_(conv.weight, a=0.2)
                # random biases keep feature norms O(1) even for flat
                # inputs, which keeps cosine-similarity gradients bounded
                nn.init.normal_(conv.bias, std=0.5)
                convs.append(conv)
                in_c = out_c
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, image: torch.Tensor) -> List[torch.Tensor]:
        x = image.permute(0, 3, 1, 2)
        feats = []
        for i, conv in enumerate(self.convs):
            x = F.leaky_relu(conv(x), 0.2)
            if i in self.taps:
                feats.append(x)
        return feats
