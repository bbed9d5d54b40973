"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines as they complete. The overfit run is shared between criteria 4-6.
"""
import dataclasses
import time

import numpy as np
import pytest
import torch

from outpaint.backbone import relative_position_bias
from outpaint.config import full_config, toy_config
from outpaint.data import OutpaintDataset, gen_synthetic
from outpaint.generator import Generator
from outpaint.geometry import center_crop, make_masked_input, ring_mask
from outpaint.losses import (LossWeights, _mrf_scale_loss, ralsgan_losses,
                             total_generator_loss)
from outpaint.metrics import psnr, psnr_masked, ssim
from outpaint.selftest import (bias_table_oracle, check_gradients,
                               idmrf_scale_oracle, psnr_oracle, ssim_oracle)
from outpaint.training import Trainer

OVERFIT_STEPS = 2000
OVERFIT_SEED = 0


def _report(criterion: str, ok: bool, detail: str = ""):
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    """Criterion 4's training run, reused by criteria 5 and 6."""
    tmp = tmp_path_factory.mktemp("accept")
    gen_synthetic(8, 48, 123, tmp / "data")
    cfg = dataclasses.replace(toy_config(), steps=OVERFIT_STEPS,
                              seed=OVERFIT_SEED, deterministic=True,
                              checkpoint_interval=1000)
    trainer = Trainer(cfg, tmp / "data", tmp / "out")
    start = time.time()
    last = {}

    def keep(step, parts):
        last.update(parts)

    final = trainer.run(progress=keep, log_every=OVERFIT_STEPS)
    return {"trainer": trainer, "cfg": cfg, "final": final, "tmp": tmp,
            "last_parts": last, "minutes": (time.time() - start) / 60}


def test_criterion_1_shape_fidelity_full_scale():
    start = time.time()
    torch.manual_seed(0)
    cfg = full_config()
    assert cfg.depths == (2, 2, 6, 2) and cfg.heads == (3, 6, 12, 24)
    assert cfg.window == 7 and cfg.embed_dim == 96 and cfg.patch == 4
    gen = Generator(cfg)
    geom = cfg.geometry()
    gt = torch.rand(1, 192, 192, 3) * 2 - 1
    sample = make_masked_input(gt, geom)
    center = center_crop(gt, geom)
    with torch.no_grad():
        feats, bott = gen.encoder(sample.masked_image)
        out = gen(sample.masked_image, center)
    ok = ([tuple(f.shape) for f in feats]
          == [(1, 48, 48, 96), (1, 24, 24, 192), (1, 12, 12, 384)]
          and tuple(bott.shape) == (1, 6, 6, 768)
          and tuple(out.pred.shape) == (1, 192, 192, 3)
          and tuple(out.enc_center.shape) == (1, 4, 4, 768)
          and tuple(out.f_cen.shape) == (1, 4, 4, 768))
    minutes = (time.time() - start) / 60
    _report("1 shape-fidelity",
            ok and minutes <= 2.0,
            f"bottleneck {tuple(bott.shape)}, output {tuple(out.pred.shape)}, "
            f"center path {tuple(out.enc_center.shape)}, {minutes:.2f} min")


def test_criterion_2_gradient_suite():
    start = time.time()
    ok, detail = check_gradients(seeds=10)
    minutes = (time.time() - start) / 60
    _report("2 gradient-suite", ok and minutes <= 5.0,
            f"{detail}, {minutes:.2f} min")


def test_criterion_3_algebraic_oracles():
    # relative-position-bias indexing vs brute enumeration
    for m in (1, 2, 3, 7):
        table = torch.from_numpy(
            np.random.default_rng(m).standard_normal(((2 * m - 1) ** 2, 3)))
        assert torch.equal(relative_position_bias(table, m),
                           bias_table_oracle(table, m)), f"bias M={m}"

    # implicit-MRF vs double-loop oracle on <=8x8 feature grids
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        feats = [torch.from_numpy(rng.standard_normal((1, 5, 8, 8))),
                 torch.from_numpy(rng.standard_normal((1, 5, 8, 8)))]
        fast = float(_mrf_scale_loss(feats[0], feats[1], 0.5, 1e-5))
        brute = idmrf_scale_oracle(feats[0][0].numpy(), feats[1][0].numpy(),
                                   0.5, 1e-5)
        worst = max(worst, abs(fast - brute))
    assert worst <= 1e-6, f"idmrf oracle gap {worst}"

    # relativistic-average hand cases
    d, g = ralsgan_losses(torch.tensor([1.0]), torch.tensor([0.0]))
    assert float(d) == 0.0 and float(g) == 8.0
    d, g = ralsgan_losses(torch.full((3,), 0.7), torch.full((3,), 0.7))
    assert abs(float(d) - 2.0) < 1e-6 and abs(float(g) - 2.0) < 1e-6

    # weighted-sum recombination with the published weights
    w = LossWeights(rec=20.0, feat_rec=1.0, mrf=0.5, adv=1.0)
    one = torch.tensor(1.0, dtype=torch.float64)
    assert float(total_generator_loss(one, one, one, one, w)) == 22.5
    rng = np.random.default_rng(9)
    parts = [torch.tensor(v) for v in rng.random(4)]
    expect = (20.0 * float(parts[0]) + 1.0 * float(parts[1])
              + 0.5 * float(parts[2]) + 1.0 * float(parts[3]))
    assert float(total_generator_loss(*parts, w)) == pytest.approx(expect, abs=1e-12)
    _report("3 algebraic-oracles", True,
            f"bias exact, idmrf gap {worst:.2e}, hand cases exact")


def test_criterion_4_overfit_run(overfit):
    # final model's reconstruction loss and ring PSNR over the training set
    trainer = overfit["trainer"]
    cfg = overfit["cfg"]
    geom = cfg.model.geometry()
    mask = ring_mask(geom).numpy()
    dataset = OutpaintDataset(overfit["tmp"] / "data", geom, cfg.fill)
    recs, ring_psnrs = [], []
    for i in range(len(dataset)):
        sample = dataset.sample(i)
        with torch.no_grad():
            pred = trainer.gen(sample.masked_image,
                               center_crop(sample.ground_truth, geom)).pred
        recs.append(float((sample.ground_truth - pred).abs().mean()))
        a = (pred.squeeze(0).numpy() + 1.0) / 2.0
        b = (sample.ground_truth.squeeze(0).numpy() + 1.0) / 2.0
        ring_psnrs.append(psnr_masked(a, b, mask))
    final_rec = float(np.mean(recs))
    mean_ring = float(np.mean(ring_psnrs))
    ok = final_rec <= 0.05 and mean_ring >= 20.0
    _report("4 overfit-run", ok,
            f"final L_rec {final_rec:.4f} (<= 0.05), ring PSNR "
            f"{mean_ring:.2f} dB (>= 20), {overfit['minutes']:.1f} min, "
            f"{OVERFIT_STEPS} steps")


def test_criterion_5_multi_step_contract(overfit):
    trainer = overfit["trainer"]
    cfg = overfit["cfg"]
    sizes = {}
    for k in (1, 2):
        geom = cfg.model.geometry(k)
        center = torch.rand(1, geom.h, geom.w, 3) * 2 - 1
        canvas = torch.full((1, geom.h_full, geom.w_full, 3), cfg.fill)
        canvas[:, geom.m:geom.m + geom.h, geom.m:geom.m + geom.w, :] = center
        with torch.no_grad():
            pred = trainer.gen(canvas, center, steps=k).pred
        sizes[k] = tuple(pred.shape[1:3])
    ok = sizes[1] == (48, 48) and sizes[2] == (64, 64)

    # full-scale arithmetic, shape-only, untrained
    torch.manual_seed(0)
    fcfg = full_config()
    fgen = Generator(fcfg)
    geom2 = fcfg.geometry(2)
    center = torch.rand(1, 128, 128, 3) * 2 - 1
    canvas = torch.zeros(1, geom2.h_full, geom2.w_full, 3)
    canvas[:, 64:192, 64:192, :] = center
    with torch.no_grad():
        pred2 = fgen(canvas, center, steps=2).pred
    ok = ok and tuple(pred2.shape[1:3]) == (256, 256)
    _report("5 multi-step", ok,
            f"toy K=1 -> {sizes[1]}, K=2 -> {sizes[2]}, "
            f"full-scale K=2 -> {tuple(pred2.shape[1:3])}")


def test_criterion_6_determinism_and_persistence(overfit, tmp_path):
    cfg = dataclasses.replace(toy_config(), steps=3, batch=2, seed=5,
                              deterministic=True, checkpoint_interval=100)
    data = overfit["tmp"] / "data"
    Trainer(cfg, data, tmp_path / "a").run()
    Trainer(cfg, data, tmp_path / "b").run()
    traces_equal = ((tmp_path / "a" / "loss_trace.csv").read_bytes()
                    == (tmp_path / "b" / "loss_trace.csv").read_bytes())

    trainer = overfit["trainer"]
    geom = overfit["cfg"].model.geometry()
    torch.manual_seed(1)
    gt = torch.rand(1, geom.h_full, geom.w_full, 3) * 2 - 1
    sample = make_masked_input(gt, geom)
    center = center_crop(gt, geom)
    with torch.no_grad():
        before = trainer.gen(sample.masked_image, center).pred
    reloaded = Trainer(overfit["cfg"], data, tmp_path / "c",
                       resume=overfit["final"])
    with torch.no_grad():
        after = reloaded.gen(sample.masked_image, center).pred
    bit_identical = torch.equal(before, after)
    _report("6 determinism-persistence", traces_equal and bit_identical,
            f"traces equal: {traces_equal}, reload bit-identical: {bit_identical}")


def test_criterion_7_metric_oracles():
    worst_p, worst_s = 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a = rng.random((14, 13, 3))
        b = rng.random((14, 13, 3))
        worst_p = max(worst_p, abs(psnr(a, b) - psnr_oracle(a, b)))
        worst_s = max(worst_s, abs(ssim(a, b) - ssim_oracle(a, b)))
    a = np.random.default_rng(99).random((16, 16, 3))
    self_one = abs(ssim(a, a) - 1.0) <= 1e-9
    noise = np.random.default_rng(100).standard_normal(a.shape)
    series = [psnr(a, np.clip(a + amp * noise, 0, 1))
              for amp in (0.01, 0.02, 0.04, 0.08, 0.16)]
    monotone = all(x > y for x, y in zip(series, series[1:]))
    ok = worst_p <= 1e-6 and worst_s <= 1e-6 and self_one and monotone
    _report("7 metric-oracles", ok,
            f"psnr gap {worst_p:.2e}, ssim gap {worst_s:.2e}, "
            f"ssim(x,x)=1: {self_one}, psnr monotone: {monotone}")
