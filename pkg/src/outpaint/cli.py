"""Command-line interface.

Exit codes: 0 success, 2 usage/config/data errors, 3 numerical failure
during training.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import torch

from . import __version__
from .checkpoint import apply_module_tensors, load_container
from .config import parse_config, parse_config_text
from .data import (OutpaintDataset, denormalize_image, gen_synthetic,
                   load_image, save_image)
from .errors import OutpaintError, TrainingError
from .generator import Generator
from .geometry import composite_center, ring_mask
from .metrics import cap_psnr, psnr, psnr_masked, ssim, ssim_masked
from .report import plot_loss_curves, render_eval_figures, write_eval_report
from .selftest import run_all
from .training import Trainer


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="outpaint",
        description="Train, run and evaluate the all-side image extrapolator.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--resume", default=None)
    p_train.add_argument("--deterministic", action="store_true")
    p_train.add_argument("--seed", type=int, default=None)

    p_out = sub.add_parser("outpaint", help="extrapolate one center image")
    p_out.add_argument("--ckpt", required=True)
    p_out.add_argument("--input", required=True)
    p_out.add_argument("--steps", type=int, default=1)
    p_out.add_argument("--out", required=True)
    p_out.add_argument("--keep-center", action="store_true")

    p_eval = sub.add_parser("eval", help="metrics report over a directory")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--report", required=True)

    p_gen = sub.add_parser("gen-synthetic", help="write procedural images")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--count", type=int, required=True)
    p_gen.add_argument("--size", type=int, default=48)
    p_gen.add_argument("--seed", type=int, default=0)

    p_self = sub.add_parser("selftest", help="run invariant/gradient suite")
    p_self.add_argument("--seeds", type=int, default=10)
    return parser


def _load_generator(ckpt_path):
    container = load_container(ckpt_path)
    cfg = parse_config_text(container.config_text)
    gen = Generator(cfg.model)
    apply_module_tensors(gen, "gen", container.tensors)
    gen.eval()
    return gen, cfg


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.deterministic:
        cfg = dataclasses.replace(cfg, deterministic=True)
    trainer = Trainer(cfg, args.data, args.out, resume=args.resume)

    def progress(step, parts):
        line = " ".join(f"{k}={v:.4f}" for k, v in parts.items())
        print(f"step {step}/{cfg.steps} {line}")

    final = trainer.run(progress=progress)
    curves = plot_loss_curves(Path(args.out) / "loss_trace.csv",
                              Path(args.out) / "loss_curves.png")
    print(f"final checkpoint: {final}")
    print(f"loss trace: {Path(args.out) / 'loss_trace.csv'}")
    print(f"loss curves: {curves}")
    return 0


def cmd_outpaint(args) -> int:
    if args.steps < 1:
        raise OutpaintError(f"--steps must be >= 1, got {args.steps}")
    gen, cfg = _load_generator(args.ckpt)
    geom = cfg.model.geometry(args.steps)
    center = load_image(args.input)  # no resize: size is a contract
    if center.shape[1:3] != (geom.h, geom.w):
        raise OutpaintError(
            f"input is {tuple(center.shape[1:3])} but the model expects the "
            f"center size {(geom.h, geom.w)}")
    canvas = torch.full((1, geom.h_full, geom.w_full, 3), float(cfg.fill))
    canvas[:, geom.m:geom.m + geom.h, geom.m:geom.m + geom.w, :] = center
    with torch.no_grad():
        out = gen(canvas, center, steps=args.steps)
    pred = out.pred
    if args.keep_center:
        pred = composite_center(pred, center, geom)
    save_image(pred, args.out)
    print(f"wrote {pred.shape[1]}x{pred.shape[2]} image to {args.out}")
    return 0


def cmd_eval(args) -> int:
    gen, cfg = _load_generator(args.ckpt)
    geom = cfg.model.geometry()
    dataset = OutpaintDataset(args.data, geom, cfg.fill)
    mask = ring_mask(geom).numpy()
    rows = []
    samples = []
    for i in range(len(dataset)):
        sample = dataset.sample(i)
        gt = sample.ground_truth
        center = gt[:, geom.m:geom.m + geom.h, geom.m:geom.m + geom.w, :]
        with torch.no_grad():
            pred = gen(sample.masked_image, center).pred
        a = (pred.squeeze(0).numpy() + 1.0) / 2.0
        b = (gt.squeeze(0).numpy() + 1.0) / 2.0
        rows.append({
            "filename": dataset.files[i].name,
            "psnr_full": psnr(a, b),
            "psnr_ring": psnr_masked(a, b, mask),
            "ssim_full": ssim(a, b),
            "ssim_ring": ssim_masked(a, b, mask),
        })
        if len(samples) < 4:
            samples.append((denormalize_image(sample.masked_image),
                            denormalize_image(pred), denormalize_image(gt)))
    means = write_eval_report(rows, args.report)
    figures = render_eval_figures(rows, samples, args.report)
    print(f"evaluated {len(rows)} images; report: {args.report}")
    for key, value in means.items():
        print(f"mean {key}: {cap_psnr(value):.4f}" if key.startswith("psnr")
              else f"mean {key}: {value:.4f}")
    for fig in figures:
        print(f"figure: {fig}")
    return 0


def cmd_gen_synthetic(args) -> int:
    paths = gen_synthetic(args.count, args.size, args.seed, args.out)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def cmd_selftest(args) -> int:
    results = run_all(seeds=args.seeds)
    width = max(len(name) for name, _, _ in results)
    failures = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"{name:<{width}}  {status}  {detail}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} group(s) failed")
        return 1
    print("all groups passed")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    handlers = {
        "train": cmd_train,
        "outpaint": cmd_outpaint,
        "eval": cmd_eval,
        "gen-synthetic": cmd_gen_synthetic,
        "selftest": cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OutpaintError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
