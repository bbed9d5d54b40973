"""Image-level critic for adversarial training."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError


def _conv_out(n: int) -> int:
    # kernel 4, stride 2, padding 1
    return (n - 2) // 2 + 1


class Discriminator(nn.Module):
    """Stride-2 convolution stack (channels doubling from ``base``) with
    LeakyReLU(0.2) and a linear head producing one unbounded score per
    image. Built for a fixed input size."""

    def __init__(self, in_h: int, in_w: int, base: int = 32, num_layers: int = 5):
        super().__init__()
        self.in_h, self.in_w = in_h, in_w
        convs = []
        c, h, w = 3, in_h, in_w
        for i in range(num_layers):
            out_c = base * (2 ** i)
            convs.append(nn.Conv2d(c, out_c, kernel_size=4, stride=2, padding=1))
            c, h, w = out_c, _conv_out(h), _conv_out(w)
            if h < 1 or w < 1:
                raise ShapeError(
                    f"input {in_h}x{in_w} too small for {num_layers} conv layers")
        self.convs = nn.ModuleList(convs)
        # no head bias: a uniform score offset cancels out of the
        # relativistic objective, so it could never train
        self.head = nn.Linear(c * h * w, 1, bias=False)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.shape[1:3] != (self.in_h, self.in_w):
            raise ShapeError(
                f"discriminator built for {self.in_h}x{self.in_w}, "
                f"got {tuple(image.shape[1:3])}")
        x = image.permute(0, 3, 1, 2)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return self.head(x.flatten(1)).squeeze(-1)
