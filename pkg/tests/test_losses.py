import math

import numpy as np
import pytest
import torch

from outpaint.errors import ShapeError, TrainingError
from outpaint.losses import (FixedFeatureExtractor, LossWeights,
                             _mrf_scale_loss, feat_rec_loss, idmrf_loss,
                             pixel_rec_loss, ralsgan_losses,
                             total_generator_loss)
from outpaint.selftest import idmrf_scale_oracle


def rand(*shape, seed=0):
    return torch.from_numpy(np.random.default_rng(seed).standard_normal(shape))


class TestPixelRec:
    def test_identical_is_zero(self):
        x = rand(1, 4, 4, 3, seed=1)
        assert float(pixel_rec_loss(x, x)) == 0.0

    def test_constant_offset(self):
        x = rand(1, 4, 4, 3, seed=2)
        assert abs(float(pixel_rec_loss(x, x + 0.5)) - 0.5) < 1e-7

    def test_matches_elementwise_oracle(self):
        a, b = rand(2, 5, 3, 2, seed=3), rand(2, 5, 3, 2, seed=4)
        total = 0.0
        for x, y in zip(a.reshape(-1).tolist(), b.reshape(-1).tolist()):
            total += abs(x - y)
        assert abs(float(pixel_rec_loss(a, b)) - total / a.numel()) < 1e-12

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            pixel_rec_loss(torch.zeros(1, 2, 2, 3), torch.zeros(1, 2, 3, 3))


class TestFeatRec:
    def test_identical_is_zero(self):
        f = rand(1, 4, 4, 768, seed=5)
        assert float(feat_rec_loss(f, f)) == 0.0

    def test_single_element_difference(self):
        f = torch.zeros(1, 2, 2, 4)
        g = f.clone()
        g[0, 1, 0, 2] = 1.0
        assert abs(float(feat_rec_loss(f, g)) - 1.0 / f.numel()) < 1e-12

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            feat_rec_loss(torch.zeros(1, 4, 4, 8), torch.zeros(1, 6, 6, 8))


class TestIdmrf:
    def test_self_match_equals_double_loop_oracle(self):
        for seed in range(4):
            feat = rand(1, 5, 3, 4, seed=seed)  # (B, C, H, W)
            loss = _mrf_scale_loss(feat, feat, bandwidth=0.5, eps=1e-5)
            oracle = idmrf_scale_oracle(feat[0].numpy(), feat[0].numpy(),
                                        bandwidth=0.5, eps=1e-5)
            assert abs(float(loss) - oracle) < 1e-6

    def test_cross_pair_equals_oracle_on_small_grids(self):
        fake, real = rand(1, 6, 8, 8, seed=10), rand(1, 6, 8, 8, seed=11)
        loss = _mrf_scale_loss(fake, real, bandwidth=0.5, eps=1e-5)
        oracle = idmrf_scale_oracle(fake[0].numpy(), real[0].numpy(), 0.5, 1e-5)
        assert abs(float(loss) - oracle) < 1e-6

    def test_single_patch_map_is_zero(self):
        fake, real = rand(1, 4, 1, 1, seed=12), rand(1, 4, 1, 1, seed=13)
        assert abs(float(_mrf_scale_loss(fake, real, 0.5, 1e-5))) < 1e-9

    def test_uniform_scaling_invariance(self):
        fake, real = rand(1, 4, 3, 3, seed=14), rand(1, 4, 3, 3, seed=15)
        a = _mrf_scale_loss(fake, real, 0.5, 1e-5)
        b = _mrf_scale_loss(3.7 * fake, 3.7 * real, 0.5, 1e-5)
        assert abs(float(a) - float(b)) < 1e-6

    def test_all_zero_features_no_nan(self):
        z = torch.zeros(1, 4, 3, 3, dtype=torch.float64)
        loss = _mrf_scale_loss(z, z, 0.5, 1e-5)
        assert torch.isfinite(loss)

    def test_summed_over_extractor_scales(self):
        extractor = FixedFeatureExtractor(seed=0, channels=(4, 8), taps=(0, 1))
        img_a, img_b = rand(1, 16, 16, 3, seed=16).float(), rand(1, 16, 16, 3, seed=17).float()
        total = idmrf_loss(img_a, img_b, extractor)
        feats_a, feats_b = extractor(img_a), extractor(img_b)
        parts = sum(float(_mrf_scale_loss(fa, fb, 0.5, 1e-5))
                    for fa, fb in zip(feats_a, feats_b))
        assert abs(float(total) - parts) < 1e-6


class TestRalsgan:
    def test_hand_case_one_zero(self):
        d, g = ralsgan_losses(torch.tensor([1.0]), torch.tensor([0.0]))
        assert float(d) == 0.0 and float(g) == 8.0

    @pytest.mark.parametrize("value", [0.0, 1.0, -3.7, 42.0])
    def test_equal_scores_give_two(self, value):
        s = torch.full((5,), value)
        d, g = ralsgan_losses(s, s.clone())
        assert abs(float(d) - 2.0) < 1e-6 and abs(float(g) - 2.0) < 1e-6

    def test_translation_invariance(self):
        r, f = rand(6, seed=19), rand(6, seed=20)
        d0, g0 = ralsgan_losses(r, f)
        d1, g1 = ralsgan_losses(r + 13.25, f + 13.25)
        assert abs(float(d0) - float(d1)) < 1e-6
        assert abs(float(g0) - float(g1)) < 1e-6

    def test_empty_scores_raise(self):
        with pytest.raises(ShapeError):
            ralsgan_losses(torch.zeros(0), torch.zeros(3))


class TestTotalLoss:
    def test_unit_parts_with_default_weights(self):
        one = torch.tensor(1.0)
        total = total_generator_loss(one, one, one, one, LossWeights())
        assert abs(float(total) - 22.5) < 1e-7

    def test_zero_parts(self):
        zero = torch.tensor(0.0)
        assert float(total_generator_loss(zero, zero, zero, zero, LossWeights())) == 0.0

    def test_zero_weights(self):
        w = LossWeights(rec=0, feat_rec=0, mrf=0, adv=0)
        parts = [torch.tensor(v) for v in (3.0, 1.0, 4.0, 1.5)]
        assert float(total_generator_loss(*parts, w)) == 0.0

    def test_nan_part_names_the_term(self):
        good = torch.tensor(1.0)
        with pytest.raises(TrainingError, match="mrf"):
            total_generator_loss(good, good, torch.tensor(math.nan), good,
                                 LossWeights())

    def test_linear_in_each_part(self):
        w = LossWeights()
        base = [torch.tensor(v) for v in (0.3, 0.7, 0.2, 0.9)]
        f0 = float(total_generator_loss(*base, w))
        for i, coeff in enumerate((w.rec, w.feat_rec, w.mrf, w.adv)):
            bumped = list(base)
            bumped[i] = base[i] + 1.0
            assert abs(float(total_generator_loss(*bumped, w)) - (f0 + coeff)) < 1e-6

    def test_negative_weight_rejected(self):
        with pytest.raises(TrainingError):
            LossWeights(rec=-1.0)


class TestFixedFeatureExtractor:
    def test_deterministic_given_seed(self):
        img = rand(1, 32, 32, 3, seed=21).float()
        a = FixedFeatureExtractor(seed=7)(img)
        b = FixedFeatureExtractor(seed=7)(img)
        assert all(torch.equal(x, y) for x, y in zip(a, b))
        c = FixedFeatureExtractor(seed=8)(img)
        assert not torch.equal(a[0], c[0])

    def test_two_scales_and_frozen(self):
        ex = FixedFeatureExtractor(seed=0)
        feats = ex(rand(2, 48, 48, 3, seed=22).float())
        assert len(feats) == 2
        assert feats[0].shape[2] == 2 * feats[1].shape[2]
        assert all(not p.requires_grad for p in ex.parameters())
