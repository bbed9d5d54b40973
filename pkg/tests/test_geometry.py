import numpy as np
import pytest
import torch

from outpaint.errors import GeometryError
from outpaint.geometry import (OutpaintGeometry, feature_grid,
                               make_masked_input, ring_mask)


def test_full_size_arithmetic():
    geom = OutpaintGeometry(h=128, w=128, m=32, downsample=32)
    assert geom.h_full == 192 and geom.w_full == 192


def test_masked_pixel_count_and_area_ratio():
    geom = OutpaintGeometry(h=128, w=128, m=32, downsample=32)
    mask = ring_mask(geom)
    assert int(mask.sum()) == 192 ** 2 - 128 ** 2 == 20480
    assert (192 ** 2) / (128 ** 2) == 2.25


def test_make_masked_input_copies_center_and_fills_ring():
    geom = OutpaintGeometry(h=4, w=4, m=2, downsample=2)
    gt = torch.arange(1 * 8 * 8 * 3, dtype=torch.float32).reshape(1, 8, 8, 3)
    sample = make_masked_input(gt, geom, fill=-0.5)
    assert torch.equal(sample.masked_image[:, 2:6, 2:6, :], gt[:, 2:6, 2:6, :])
    ring = sample.mask > 0
    assert torch.all(sample.masked_image[0][ring] == -0.5)
    assert torch.equal(sample.ground_truth, gt)


def test_zero_margin_is_identity():
    geom = OutpaintGeometry(h=8, w=8, m=0, downsample=2)
    gt = torch.rand(1, 8, 8, 3)
    sample = make_masked_input(gt, geom)
    assert torch.equal(sample.masked_image, gt)
    assert sample.mask.sum() == 0
    grid = feature_grid(geom)
    assert grid.ring == 0 and (grid.grid_h, grid.grid_w) == (grid.center_h, grid.center_w)


def test_feature_grid_full_scale_arithmetic():
    # patch 4 with 4 stages gives a total downsample of 4*2*2*2 = 32
    geom = OutpaintGeometry(h=128, w=128, m=32, downsample=32)
    assert feature_grid(geom) == (6, 6, 4, 4, 1)
    two_step = geom.scaled(2)
    assert (two_step.h_full, two_step.w_full) == (256, 256)
    assert feature_grid(two_step)[:2] == (8, 8)


def test_size_mismatch_raises():
    geom = OutpaintGeometry(h=4, w=4, m=2, downsample=2)
    with pytest.raises(GeometryError):
        make_masked_input(torch.zeros(1, 6, 8, 3), geom)


@pytest.mark.parametrize("h,w,m,ds", [(5, 4, 2, 2), (4, 4, 3, 2), (4, 4, 2, 3)])
def test_indivisible_sizes_raise(h, w, m, ds):
    with pytest.raises(GeometryError):
        OutpaintGeometry(h=h, w=w, m=m, downsample=ds)


def test_grid_identity_over_random_geometries():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ds = int(rng.choice([1, 2, 4, 8, 16]))
        geom = OutpaintGeometry(h=ds * int(rng.integers(1, 9)),
                                w=ds * int(rng.integers(1, 9)),
                                m=ds * int(rng.integers(0, 5)),
                                downsample=ds)
        grid = feature_grid(geom)
        assert grid.grid_h == grid.center_h + 2 * grid.ring
        assert grid.grid_w == grid.center_w + 2 * grid.ring


def test_ring_overwrite_reconstructs_ground_truth():
    rng = np.random.default_rng(1)
    for _ in range(20):
        ds = int(rng.choice([1, 2, 4]))
        geom = OutpaintGeometry(h=ds * int(rng.integers(1, 5)),
                                w=ds * int(rng.integers(1, 5)),
                                m=ds * int(rng.integers(0, 4)),
                                downsample=ds)
        gt = torch.rand(1, geom.h_full, geom.w_full, 3) * 2 - 1
        sample = make_masked_input(gt, geom, fill=0.25)
        m = sample.mask.unsqueeze(0).unsqueeze(-1)
        assert torch.equal(sample.masked_image * (1 - m) + gt * m, gt)
