"""PSNR and SSIM on images in [0, 1].

PSNR of identical images is reported as +inf; file outputs cap it at
``PSNR_CAP``. SSIM uses the standard 11x11 Gaussian window (sigma 1.5,
K1=0.01, K2=0.03). Ring variants restrict the average to the masked
region: PSNR over ring pixels, SSIM over window positions whose center
pixel lies in the ring.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 * log10(1 / MSE) in dB for images in [0, 1]."""
    _check_pair(a, b)
    mse = float(np.mean((np.asarray(a, dtype=np.float64)
                         - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr_masked(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """PSNR restricted to pixels where ``mask`` > 0 (mask is (H, W))."""
    _check_pair(a, b)
    sel = np.asarray(mask) > 0
    if not sel.any():
        raise ShapeError("mask selects no pixels")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = float(np.mean((diff[sel]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def cap_psnr(value: float) -> float:
    return min(value, PSNR_CAP)


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-position SSIM over valid 11x11 windows.

    Inputs are (H, W) or (H, W, C) in [0, 1]; the result is
    (H-10, W-10, C) indexed by window top-left corner.
    """
    _check_pair(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ShapeError(
            f"image {a.shape[:2]} smaller than SSIM window {SSIM_WINDOW}")
    kernel = gaussian_kernel()
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2

    def filt(x):
        win = sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW), axis=(0, 1))
        return np.tensordot(win, kernel, axes=([-2, -1], [0, 1]))

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    return (((2 * mu_a * mu_b + c1) * (2 * cov + c2))
            / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over channels and valid window positions."""
    return float(ssim_map(a, b).mean())


def ssim_masked(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Mean SSIM over window positions whose center pixel is masked."""
    smap = ssim_map(a, b)
    half = SSIM_WINDOW // 2
    centers = np.asarray(mask)[half:half + smap.shape[0],
                               half:half + smap.shape[1]] > 0
    if not centers.any():
        raise ShapeError("mask selects no SSIM window centers")
    return float(smap[centers].mean())
