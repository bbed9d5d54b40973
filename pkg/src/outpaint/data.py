"""Dataset ingestion and synthetic image generation.

Images are decoded with Pillow (PNG/JPEG only), bilinearly resized to the
full geometry size, and normalized to [-1, 1] as 2*(v/255) - 1.
"""
from __future__ import annotations

import math
import warnings
from pathlib import Path
from typing import Iterator, List, Tuple

import numpy as np
import torch
from PIL import Image

from .errors import DataError
from .geometry import MaskedSample, OutpaintGeometry, make_masked_input, ring_mask

IMAGE_EXTS = {".png", ".jpg", ".jpeg"}


def normalize_image(arr: np.ndarray) -> torch.Tensor:
    """uint8 (H, W, 3) -> float32 (1, H, W, 3) in [-1, 1]."""
    x = arr.astype(np.float32) / 255.0 * 2.0 - 1.0
    return torch.from_numpy(x).unsqueeze(0)


def denormalize_image(t: torch.Tensor) -> np.ndarray:
    """float (1, H, W, 3) in [-1, 1] -> uint8 (H, W, 3)."""
    x = (t.detach().squeeze(0).clamp(-1, 1).numpy() + 1.0) / 2.0 * 255.0
    return np.rint(x).astype(np.uint8)


def load_image(path, size_hw: Tuple[int, int] | None = None) -> torch.Tensor:
    """Decode, optionally resize to (h, w), and normalize one image."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size_hw is not None and im.size != (size_hw[1], size_hw[0]):
            im = im.resize((size_hw[1], size_hw[0]), Image.BILINEAR)
        return normalize_image(np.asarray(im))


def save_image(t: torch.Tensor, path) -> None:
    Image.fromarray(denormalize_image(t)).save(path)


class OutpaintDataset:
    """Folder of images served as masked samples under a fixed geometry."""

    def __init__(self, directory, geom: OutpaintGeometry, fill: float = 0.0):
        self.geom = geom
        self.fill = fill
        root = Path(directory)
        if not root.is_dir():
            raise DataError(f"dataset directory {root} does not exist")
        self.files: List[Path] = sorted(
            p for p in root.iterdir() if p.suffix.lower() in IMAGE_EXTS)
        kept = []
        for p in self.files:
            try:
                with Image.open(p) as im:
                    im.verify()
                kept.append(p)
            except Exception:
                warnings.warn(f"skipping undecodable image {p}")
        self.files = kept
        if not self.files:
            raise DataError(f"no decodable PNG/JPEG images in {root}")

    def __len__(self) -> int:
        return len(self.files)

    def sample(self, index: int) -> MaskedSample:
        gt = load_image(self.files[index], (self.geom.h_full, self.geom.w_full))
        return make_masked_input(gt, self.geom, self.fill)

    def batches_per_epoch(self, batch: int) -> int:
        return len(self.files) // batch


def batch_stream(dataset: OutpaintDataset, batch: int,
                 seed: int) -> Iterator[MaskedSample]:
    """Endless stream of stacked batches; order is a seeded shuffle per
    epoch and full batches only (the remainder is dropped)."""
    if batch > len(dataset):
        raise DataError(
            f"batch size {batch} exceeds dataset size {len(dataset)}")
    rng = np.random.default_rng(seed)
    mask = ring_mask(dataset.geom)
    while True:
        order = rng.permutation(len(dataset))
        for start in range(0, len(dataset) - batch + 1, batch):
            samples = [dataset.sample(int(i)) for i in order[start:start + batch]]
            yield MaskedSample(
                masked_image=torch.cat([s.masked_image for s in samples]),
                mask=mask,
                ground_truth=torch.cat([s.ground_truth for s in samples]),
            )


def gen_synthetic(count: int, size: int, seed: int, out_dir) -> List[Path]:
    """Write procedural PNG images fully determined by the seed.

    Each image is a two-color linear gradient plus a sinusoidal texture and
    up to three solid rectangles.
    """
    if count < 1:
        raise DataError(f"count must be >= 1, got {count}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    paths = []
    for i in range(count):
        theta = rng.uniform(0, 2 * math.pi)
        t = math.cos(theta) * xx + math.sin(theta) * yy
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        c0 = rng.uniform(0, 255, 3)
        c1 = rng.uniform(0, 255, 3)
        img = c0 + t[..., None] * (c1 - c0)

        theta2 = rng.uniform(0, 2 * math.pi)
        freq = rng.uniform(1.5, 6.0)
        phase = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(8.0, 40.0)
        wave = np.sin(2 * math.pi * freq * (math.cos(theta2) * xx
                                            + math.sin(theta2) * yy) + phase)
        img += amp * wave[..., None] * rng.uniform(0.4, 1.0, 3)

        for _ in range(int(rng.integers(0, 4))):
            y0, x0 = rng.integers(0, size, 2)
            hh = int(rng.integers(size // 8, max(size // 2, size // 8 + 1)))
            ww = int(rng.integers(size // 8, max(size // 2, size // 8 + 1)))
            color = rng.uniform(0, 255, 3)
            img[y0:y0 + hh, x0:x0 + ww] = (
                0.35 * img[y0:y0 + hh, x0:x0 + ww] + 0.65 * color)

        arr = np.clip(img, 0, 255).astype(np.uint8)
        path = out / f"synthetic_{i:04d}.png"
        Image.fromarray(arr).save(path)
        paths.append(path)
    return paths
