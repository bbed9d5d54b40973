import csv
import math

import numpy as np

from outpaint.report import (EVAL_COLUMNS, plot_loss_curves,
                             render_eval_figures, write_eval_report)


def _rows():
    return [
        {"filename": "a.png", "psnr_full": 21.5, "psnr_ring": 18.25,
         "ssim_full": 0.91, "ssim_ring": 0.84},
        {"filename": "b.png", "psnr_full": math.inf, "psnr_ring": 30.0,
         "ssim_full": 1.0, "ssim_ring": 0.99},
    ]


def test_eval_report_csv_and_caps(tmp_path):
    report = tmp_path / "r.csv"
    means = write_eval_report(_rows(), report)
    text = report.read_text()
    assert text.startswith("# fid: N/A")
    body = [l for l in text.splitlines() if not l.startswith("#")]
    assert body[0] == ",".join(EVAL_COLUMNS)
    reader = csv.DictReader(body)
    parsed = list(reader)
    assert parsed[1]["psnr_full"] == "99.000000"  # +inf capped for file output
    assert means["psnr_full"] == (21.5 + 99.0) / 2
    assert abs(means["ssim_ring"] - (0.84 + 0.99) / 2) < 1e-12


def test_eval_figures_written(tmp_path):
    report = tmp_path / "r.csv"
    write_eval_report(_rows(), report)
    img = np.zeros((48, 48, 3), dtype=np.uint8)
    paths = render_eval_figures(_rows(), [(img, img, img)], report)
    assert [p.name for p in paths] == ["r_metrics.png", "r_samples.png"]
    assert all(p.stat().st_size > 0 for p in paths)


def test_loss_curve_figure(tmp_path):
    trace = tmp_path / "loss_trace.csv"
    with open(trace, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "rec", "feat_rec", "mrf", "adv", "total_g", "d"])
        for i in range(1, 6):
            writer.writerow([i, 1.0 / i, 0.5 / i, 0.2, 0.1, 20.0 / i, 2.0])
    out = plot_loss_curves(trace, tmp_path / "curves.png")
    assert out.exists() and out.stat().st_size > 0
