"""Invariant and gradient self-checks, runnable offline via the CLI.

Every analytic gradient is compared against a central finite difference
at float64; algebraic operations are compared against brute-force
enumeration oracles written as plain loops so they share no code with the
implementation paths they check.
"""
from __future__ import annotations

import math
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .backbone import (PatchExpand, PatchMerge, WindowStage,
                       relative_position_bias, scaled_dot_attention,
                       skip_fuse, window_partition, window_reverse)
from .config import ModelConfig
from .extrapolator import FeatureExtrapolator, regulate_bar
from .generator import Generator
from .geometry import OutpaintGeometry, feature_grid, make_masked_input
from .losses import (FixedFeatureExtractor, LossWeights, feat_rec_loss,
                     idmrf_loss, pixel_rec_loss, ralsgan_losses,
                     total_generator_loss)

GRAD_TOL = 1e-4


# ---------------------------------------------------------------------------
# finite-difference machinery


def fd_gradient_error(fn: Callable[..., torch.Tensor],
                      inputs: Sequence[torch.Tensor],
                      rng: np.random.Generator,
                      n_probes: int = 2, eps: float = 1e-5) -> float:
    """Worst relative error between autograd and central differences.

    ``fn`` must return a scalar; every input is probed at its largest
    analytic-gradient coordinate plus random coordinates. The denominator
    max(|analytic|, |numeric|, 1e-4) makes the comparison relative for
    meaningful gradient components and an absolute 1e-8 gate below that,
    which is the float64 finite-difference noise floor.
    """
    leaves = [t.detach().to(torch.float64).clone().requires_grad_(True)
              for t in inputs]
    out = fn(*leaves)
    grads = torch.autograd.grad(out, leaves, allow_unused=True)
    grads = [g if g is not None else torch.zeros_like(l)
             for g, l in zip(grads, leaves)]

    def eval_at(perturbed: List[torch.Tensor]) -> float:
        with torch.no_grad():
            return float(fn(*perturbed))

    worst = 0.0
    for which, (leaf, grad) in enumerate(zip(leaves, grads)):
        flat = leaf.detach().reshape(-1)
        gflat = grad.reshape(-1)
        gmax = float(gflat.abs().max())
        if gmax == 0.0:
            # unused/zero-gradient tensor: confirm numerically on one coord
            idx = int(rng.integers(0, flat.numel()))
            h = eps * max(1.0, abs(float(flat[idx])))
            moved = [l.detach().clone() for l in leaves]
            moved[which].reshape(-1)[idx] += h
            if abs(eval_at(moved) - eval_at(leaves)) / h > 1e-8:
                worst = max(worst, 1.0)
            continue
        # relative comparison is only meaningful where the gradient is not
        # negligible; sample probes among such coordinates
        candidates = (gflat.abs() >= 1e-3 * gmax).nonzero().reshape(-1)
        coords = {int(gflat.abs().argmax())}
        while len(coords) < min(n_probes, candidates.numel()):
            coords.add(int(candidates[int(rng.integers(0, candidates.numel()))]))
        for idx in coords:
            h = eps * max(1.0, abs(float(flat[idx])))

            def shifted(delta: float) -> float:
                moved = [l.detach().clone() for l in leaves]
                moved[which].reshape(-1)[idx] += delta
                return eval_at(moved)

            # fourth-order central difference keeps truncation error below
            # the 1e-4 gate even through sharply curved normalization layers
            numeric = (8 * (shifted(h) - shifted(-h))
                       - (shifted(2 * h) - shifted(-2 * h))) / (12 * h)
            analytic = float(gflat[idx])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)
            worst = max(worst, err)
    return worst


def module_gradient_error(module: nn.Module, inputs: Sequence[torch.Tensor],
                          rng: np.random.Generator,
                          n_probes: int = 2) -> float:
    """FD check of a module forward wrt its parameters and tensor inputs.

    Entry points other than ``forward`` go through a ``_Wrapped`` module.
    """
    module = module.double()
    names = [n for n, _ in module.named_parameters()]
    params = [p.detach().clone() for _, p in module.named_parameters()]

    with torch.no_grad():
        ref = module(*[t.double() for t in inputs])
    cot = torch.from_numpy(rng.standard_normal(tuple(ref.shape)))

    def fn(*leaves):
        param_dict = dict(zip(names, leaves[:len(names)]))
        xs = leaves[len(names):]
        out = torch.func.functional_call(module, param_dict, tuple(xs))
        return (out * cot).sum()

    return fd_gradient_error(fn, params + [t.double() for t in inputs],
                             rng, n_probes=n_probes)


class _Wrapped(nn.Module):
    """Exposes an arbitrary closure over a submodule as ``forward``."""

    def __init__(self, inner: nn.Module, fn: Callable):
        super().__init__()
        self.inner = inner
        self._fn = fn

    def forward(self, *xs):
        return self._fn(self.inner, *xs)


# ---------------------------------------------------------------------------
# brute-force oracles


def bias_table_oracle(table: torch.Tensor, window: int) -> torch.Tensor:
    """Per-head bias matrix built by explicit coordinate enumeration."""
    m = window
    n = m * m
    heads = table.shape[1]
    out = torch.zeros(heads, n, n, dtype=table.dtype)
    for i in range(n):
        yi, xi = divmod(i, m)
        for j in range(n):
            yj, xj = divmod(j, m)
            idx = (yi - yj + m - 1) * (2 * m - 1) + (xi - xj + m - 1)
            for h in range(heads):
                out[h, i, j] = table[idx, h]
    return out


def idmrf_scale_oracle(feat_fake: np.ndarray, feat_real: np.ndarray,
                       bandwidth: float, eps: float) -> float:
    """Double-loop reference of one implicit-MRF scale on (C, H, W) maps."""
    c, h, w = feat_fake.shape
    fake = [feat_fake[:, y, x] for y in range(h) for x in range(w)]
    real = [feat_real[:, y, x] for y in range(h) for x in range(w)]

    def cos(u, v):
        nu = max(math.sqrt(float(np.dot(u, u))), eps)
        nv = max(math.sqrt(float(np.dot(v, v))), eps)
        return float(np.dot(u, v)) / (nu * nv)

    mu = [[cos(v, s) for s in real] for v in fake]
    rs_bar = []
    for row in mu:
        best = max(row)
        rs = [math.exp((val / (best + eps)) / bandwidth) for val in row]
        z = sum(rs)
        rs_bar.append([val / z for val in rs])
    per_real = [max(rs_bar[v][s] for v in range(len(fake)))
                for s in range(len(real))]
    return -math.log(sum(per_real) / len(per_real))


def psnr_oracle(a: np.ndarray, b: np.ndarray) -> float:
    """Two-pass MSE accumulation with explicit loops."""
    flat_a = np.asarray(a, dtype=np.float64).reshape(-1)
    flat_b = np.asarray(b, dtype=np.float64).reshape(-1)
    total = 0.0
    for x, y in zip(flat_a.tolist(), flat_b.tolist()):
        total += (x - y) ** 2
    mse = total / flat_a.size
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim_oracle(a: np.ndarray, b: np.ndarray, window: int = 11,
                sigma: float = 1.5) -> float:
    """Direct-formula SSIM with explicit window loops."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    half = (window - 1) / 2
    weights = np.zeros((window, window))
    for u in range(window):
        for v in range(window):
            weights[u, v] = math.exp(-(((u - half) ** 2 + (v - half) ** 2)
                                       / (2 * sigma ** 2)))
    weights /= weights.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    hh, ww, cc = a.shape
    values = []
    for ch in range(cc):
        for y in range(hh - window + 1):
            for x in range(ww - window + 1):
                wa = a[y:y + window, x:x + window, ch]
                wb = b[y:y + window, x:x + window, ch]
                mu_a = float((weights * wa).sum())
                mu_b = float((weights * wb).sum())
                var_a = float((weights * wa * wa).sum()) - mu_a ** 2
                var_b = float((weights * wb * wb).sum()) - mu_b ** 2
                cov = float((weights * wa * wb).sum()) - mu_a * mu_b
                values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                              / ((mu_a ** 2 + mu_b ** 2 + c1)
                                 * (var_a + var_b + c2)))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# check groups


def check_geometry(seeds: int = 10) -> Tuple[bool, str]:
    rng = np.random.default_rng(1234)
    for _ in range(seeds * 5):
        ds = int(rng.choice([1, 2, 4, 8]))
        h = ds * int(rng.integers(1, 9)) * 2
        w = ds * int(rng.integers(1, 9)) * 2
        m = ds * int(rng.integers(0, 4))
        geom = OutpaintGeometry(h, w, m, ds)
        grid = feature_grid(geom)
        if grid.grid_h != grid.center_h + 2 * grid.ring:
            return False, f"grid identity failed for {geom}"
        if grid.grid_w != grid.center_w + 2 * grid.ring:
            return False, f"grid identity failed for {geom}"
        gt = torch.rand(1, geom.h_full, geom.w_full, 3) * 2 - 1
        sample = make_masked_input(gt, geom, fill=0.0)
        mask = sample.mask.unsqueeze(0).unsqueeze(-1)
        restored = sample.masked_image * (1 - mask) + gt * mask
        if not torch.equal(restored, gt):
            return False, f"mask roundtrip failed for {geom}"
    return True, f"{seeds * 5} random geometries"


def check_window_roundtrip(seeds: int = 10) -> Tuple[bool, str]:
    rng = np.random.default_rng(77)
    for _ in range(seeds * 3):
        h = int(rng.integers(1, 20))
        w = int(rng.integers(1, 20))
        win = int(rng.integers(1, 8))
        shift = int(rng.integers(0, win))
        x = torch.from_numpy(rng.standard_normal((2, h, w, 3))).float()
        windows, _, pads = window_partition(x, win, shift)
        back = window_reverse(windows, win, pads, 2, h, w)
        if not torch.equal(back, x):
            return False, f"roundtrip failed h={h} w={w} M={win} shift={shift}"
    return True, f"{seeds * 3} random extents incl. shifted grids"


def check_bias_indexing(windows=(1, 2, 3, 7)) -> Tuple[bool, str]:
    for m in windows:
        table = torch.arange((2 * m - 1) ** 2 * 2, dtype=torch.float64)
        table = table.reshape((2 * m - 1) ** 2, 2)
        fast = relative_position_bias(table, m)
        brute = bias_table_oracle(table, m)
        if not torch.equal(fast, brute):
            return False, f"bias mismatch at M={m}"
    return True, f"M in {tuple(windows)} vs enumeration"


def check_softmax_rows(seeds: int = 10) -> Tuple[bool, str]:
    rng = np.random.default_rng(5)
    for _ in range(seeds):
        n, d = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        q = torch.from_numpy(rng.standard_normal((1, n, d)))
        k = torch.from_numpy(rng.standard_normal((1, n, d)))
        bias = torch.from_numpy(rng.standard_normal((1, n, n)))
        valid = torch.from_numpy(rng.random((1, n)) > 0.3)
        if not valid.any():
            valid[0, 0] = True
        logits = q @ k.transpose(-2, -1) / math.sqrt(d) + bias
        logits = logits.masked_fill(~valid.unsqueeze(-2), -1e9)
        rows = logits.softmax(-1)
        sums = (rows * valid.unsqueeze(-2)).sum(-1)
        if (sums - 1).abs().max() > 1e-6:
            return False, "softmax row sums off over valid keys"
    return True, f"{seeds} random masked attention rows"


def _gradient_cases(rng: np.random.Generator) -> Dict[str, float]:
    """One seed's worth of finite-difference checks; returns worst errors."""
    results: Dict[str, float] = {}

    def rand(*shape):
        return torch.from_numpy(rng.standard_normal(shape))

    # attention core with an invalid key
    n, d = 5, 3
    valid = torch.ones(1, n, dtype=torch.bool)
    valid[0, -1] = False
    cot = rand(1, n, d)
    results["attention"] = fd_gradient_error(
        lambda q, k, v, b: (scaled_dot_attention(q, k, v, b, valid) * cot).sum(),
        [rand(1, n, d), rand(1, n, d), rand(1, n, d), rand(1, n, n)], rng)

    # block pair (plain + shifted windows, non-multiple extent)
    stage = WindowStage(dim=8, num_heads=2, window=2, depth=2)
    results["block_pair"] = module_gradient_error(stage, [rand(1, 3, 5, 8)], rng)

    results["patch_merge"] = module_gradient_error(
        PatchMerge(6), [rand(1, 4, 4, 6)], rng)

    results["patch_expand"] = module_gradient_error(
        PatchExpand(8), [rand(1, 3, 3, 8)], rng)

    cot_fuse = rand(1, 4, 4, 3)
    results["skip_fuse"] = fd_gradient_error(
        lambda fe, fd: (skip_fuse(fe, fd, 2, 2) * cot_fuse).sum(),
        [rand(1, 4, 4, 3), rand(1, 4, 4, 3)], rng)

    ex = FeatureExtrapolator(channels=6, num_heads=2, ring=2)
    extend = _Wrapped(ex, lambda m, bar: torch.cat(
        m.extend_bar(bar, 2, m.lstm_h), dim=1))
    results["extend_bar"] = module_gradient_error(extend, [rand(2, 3, 6)], rng)

    regulate = _Wrapped(ex, lambda m, new, ctx: regulate_bar(new, ctx, m.reg_attn))
    results["regulate_bar"] = module_gradient_error(
        regulate, [rand(1, 3, 6), rand(1, 7, 6)], rng)

    results["extrapolator_fwd"] = module_gradient_error(
        FeatureExtrapolator(channels=4, num_heads=2, ring=1),
        [rand(1, 2, 2, 4)], rng)

    # losses
    results["pixel_rec"] = fd_gradient_error(
        lambda a, b: pixel_rec_loss(a, b), [rand(1, 4, 4, 3), rand(1, 4, 4, 3)], rng)
    results["feat_rec"] = fd_gradient_error(
        lambda a, b: feat_rec_loss(a, b), [rand(1, 2, 2, 5), rand(1, 2, 2, 5)], rng)
    results["ralsgan_d"] = fd_gradient_error(
        lambda r, f: ralsgan_losses(r, f)[0], [rand(4), rand(4)], rng)
    results["ralsgan_g"] = fd_gradient_error(
        lambda r, f: ralsgan_losses(r, f)[1], [rand(4), rand(4)], rng)

    extractor = FixedFeatureExtractor(seed=3, channels=(4, 6), taps=(0, 1)).double()
    results["idmrf"] = fd_gradient_error(
        lambda a, b: idmrf_loss(torch.tanh(a), torch.tanh(b), extractor),
        [rand(1, 12, 12, 3), rand(1, 12, 12, 3)], rng)

    weights = LossWeights()
    results["total_loss"] = fd_gradient_error(
        lambda *ps: total_generator_loss(*[p.abs().mean() for p in ps], weights),
        [rand(3), rand(3), rand(3), rand(3)], rng)
    return results


def check_gradients(seeds: int = 10) -> Tuple[bool, str]:
    worst: Dict[str, float] = {}
    for seed in range(seeds):
        rng = np.random.default_rng(1000 + seed)
        for name, err in _gradient_cases(rng).items():
            worst[name] = max(worst.get(name, 0.0), err)
    bad = {k: v for k, v in worst.items() if v > GRAD_TOL}
    detail = ", ".join(f"{k}={v:.2e}" for k, v in sorted(worst.items()))
    if bad:
        return False, f"over tolerance: {detail}"
    return True, f"{seeds} seeds, worst rel err {max(worst.values()):.2e}"


def check_no_dead_params() -> Tuple[bool, str]:
    torch.manual_seed(0)
    cfg = ModelConfig()  # desk-scale defaults
    gen = Generator(cfg)
    geom = cfg.geometry()
    gt = torch.rand(1, geom.h_full, geom.w_full, 3) * 2 - 1
    sample = make_masked_input(gt, geom)
    center = gt[:, geom.m:geom.m + geom.h, geom.m:geom.m + geom.w, :]
    out = gen(sample.masked_image, center)
    loss = out.pred.square().mean() + out.f_cen.square().mean() \
        + out.enc_center.square().mean()
    loss.backward()
    dead = [n for n, p in gen.named_parameters()
            if p.grad is None or float(p.grad.abs().sum()) == 0.0]
    if dead:
        return False, f"dead parameters: {dead[:5]} (+{max(0, len(dead) - 5)} more)"
    return True, f"all {sum(1 for _ in gen.named_parameters())} tensors receive gradient"


def check_extrapolator_contract(seeds: int = 10) -> Tuple[bool, str]:
    rng = np.random.default_rng(99)
    for _ in range(seeds):
        hc = int(rng.integers(1, 5))
        wc = int(rng.integers(1, 5))
        ring = int(rng.integers(1, 3))
        steps = int(rng.integers(1, 3))
        torch.manual_seed(int(rng.integers(0, 10000)))
        ex = FeatureExtrapolator(channels=4, num_heads=2, ring=ring)
        x = torch.from_numpy(rng.standard_normal((2, hc, wc, 4))).float()
        out = ex(x, steps)
        want = (2, hc + 2 * steps * ring, wc + 2 * steps * ring, 4)
        if tuple(out.shape) != want:
            return False, f"size {tuple(out.shape)} != {want}"
        if not torch.equal(out, ex(x, steps)):
            return False, "extrapolation is not deterministic"
    return True, f"{seeds} random size/step configurations"


def run_all(seeds: int = 10) -> List[Tuple[str, bool, str]]:
    groups = [
        ("geometry", lambda: check_geometry(seeds)),
        ("window-roundtrip", lambda: check_window_roundtrip(seeds)),
        ("bias-indexing", check_bias_indexing),
        ("softmax-rows", lambda: check_softmax_rows(seeds)),
        ("gradients-vs-fd", lambda: check_gradients(seeds)),
        ("no-dead-params", check_no_dead_params),
        ("extrapolator", lambda: check_extrapolator_contract(seeds)),
    ]
    results = []
    for name, fn in groups:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
