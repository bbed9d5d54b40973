"""Delimited reports plus rendered figures next to them.

The training path pairs ``loss_trace.csv`` with a loss-curve figure; the
evaluation path pairs the metrics CSV with a score-distribution figure and
a qualitative sample sheet.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import cap_psnr  # noqa: E402

EVAL_COLUMNS = ("filename", "psnr_full", "psnr_ring", "ssim_full", "ssim_ring")


def plot_loss_curves(trace_csv, out_png) -> Path:
    steps: List[int] = []
    series: Dict[str, List[float]] = {}
    with open(trace_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            for key, value in row.items():
                if key != "step":
                    series.setdefault(key, []).append(float(value))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for key, values in series.items():
        ax.plot(steps, values, label=key, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(ncol=3, fontsize=8)
    ax.set_title("training losses")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def write_eval_report(rows: Sequence[Dict], report_path) -> Dict[str, float]:
    """Write the per-image metrics CSV; returns the column means.

    FID and Inception Score need large pretrained classifiers and are
    deliberately not computed; the header marks them N/A.
    """
    report_path = Path(report_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", newline="") as fh:
        fh.write("# fid: N/A (requires a pretrained classifier)\n")
        fh.write("# inception_score: N/A (requires a pretrained classifier)\n")
        writer = csv.writer(fh)
        writer.writerow(EVAL_COLUMNS)
        for row in rows:
            writer.writerow([
                row["filename"],
                f"{cap_psnr(row['psnr_full']):.6f}",
                f"{cap_psnr(row['psnr_ring']):.6f}",
                f"{row['ssim_full']:.6f}",
                f"{row['ssim_ring']:.6f}",
            ])
    means = {}
    for key in EVAL_COLUMNS[1:]:
        finite = [cap_psnr(r[key]) if key.startswith("psnr") else r[key]
                  for r in rows]
        means[key] = float(np.mean(finite)) if finite else math.nan
    return means


def render_eval_figures(rows: Sequence[Dict],
                        samples: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
                        report_path) -> List[Path]:
    """Figures alongside the CSV: metric distributions and a sample sheet.

    ``samples`` holds (masked, predicted, ground-truth) uint8 images for a
    few evaluated files.
    """
    report_path = Path(report_path)
    stem = report_path.with_suffix("")
    written: List[Path] = []

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, keys in zip(axes, (("psnr_full", "psnr_ring"),
                               ("ssim_full", "ssim_ring"))):
        for key in keys:
            values = [cap_psnr(r[key]) if key.startswith("psnr") else r[key]
                      for r in rows]
            ax.hist(values, bins=min(20, max(3, len(rows))), alpha=0.6, label=key)
        ax.legend(fontsize=8)
        ax.set_ylabel("images")
    axes[0].set_xlabel("PSNR (dB)")
    axes[1].set_xlabel("SSIM")
    fig.suptitle("evaluation metrics")
    fig.tight_layout()
    metrics_png = Path(f"{stem}_metrics.png")
    fig.savefig(metrics_png, dpi=120)
    plt.close(fig)
    written.append(metrics_png)

    if samples:
        n = len(samples)
        fig, axes = plt.subplots(n, 3, figsize=(6.5, 2.2 * n), squeeze=False)
        for i, (masked, pred, gt) in enumerate(samples):
            for j, (img, title) in enumerate(
                    ((masked, "masked input"), (pred, "predicted"),
                     (gt, "ground truth"))):
                axes[i][j].imshow(img)
                axes[i][j].set_axis_off()
                if i == 0:
                    axes[i][j].set_title(title, fontsize=9)
        fig.tight_layout()
        samples_png = Path(f"{stem}_samples.png")
        fig.savefig(samples_png, dpi=120)
        plt.close(fig)
        written.append(samples_png)
    return written
