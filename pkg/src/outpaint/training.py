"""Adversarial training loop, name-keyed Adam, and checkpoint wiring."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, Dict, Optional

import torch
import torch.nn as nn

from .checkpoint import (apply_module_tensors, load_container, module_tensors,
                         save_container)
from .config import TrainConfig, config_to_text
from .data import OutpaintDataset, batch_stream
from .discriminator import Discriminator
from .errors import CheckpointError, TrainingError
from .generator import Generator, init_parameters
from .geometry import MaskedSample, center_crop
from .losses import (FixedFeatureExtractor, feat_rec_loss, idmrf_loss,
                     pixel_rec_loss, ralsgan_losses, total_generator_loss)

TRACE_COLUMNS = ("step", "rec", "feat_rec", "mrf", "adv", "total_g", "d")


class NamedAdam:
    """Adam with first/second moments keyed by parameter name, so optimizer
    state round-trips through the checkpoint container by name."""

    def __init__(self, params: Dict[str, nn.Parameter], lr: float,
                 betas=(0.5, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1 - b1 ** self.t
        bc2 = 1 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = torch.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt_().add_(self.eps), value=-self.lr)

    def state_tensors(self, prefix: str) -> Dict[str, torch.Tensor]:
        out = {}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state_tensors(self, prefix: str, tensors, t: int) -> None:
        for k, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                key = f"{prefix}.{slot}.{k}"
                if key not in tensors:
                    raise CheckpointError(f"checkpoint is missing tensor '{key}'")
                if tuple(tensors[key].shape) != tuple(p.shape):
                    raise CheckpointError(
                        f"shape mismatch for '{key}': checkpoint has "
                        f"{tuple(tensors[key].shape)}, model expects {tuple(p.shape)}")
                store[k] = tensors[key].to(p.dtype).clone()
        self.t = t


def train_step(batch: MaskedSample, gen: Generator, disc: Discriminator,
               extractor, opt_g: NamedAdam, opt_d: NamedAdam,
               cfg: TrainConfig) -> Dict[str, float]:
    """One discriminator update on detached fakes, then one generator
    update on the full weighted objective. Returns all scalar loss parts;
    ``total_g`` is recombined from the logged parts so it is exactly the
    weighted sum of the other columns."""
    geom = cfg.model.geometry()
    gt = batch.ground_truth
    center = center_crop(gt, geom)
    out = gen(batch.masked_image, center)
    pred = out.pred

    opt_d.zero_grad()
    s_real = disc(gt)
    s_fake = disc(pred.detach())
    loss_d, _ = ralsgan_losses(s_real, s_fake)
    if not torch.isfinite(loss_d):
        raise TrainingError("discriminator loss is not finite")
    loss_d.backward()
    opt_d.step()

    opt_g.zero_grad()
    l_rec = pixel_rec_loss(gt, pred)
    l_feat = feat_rec_loss(out.f_cen, out.enc_center)
    if cfg.weights.mrf > 0:
        l_mrf = idmrf_loss(pred, gt, extractor, cfg.mrf_bandwidth, cfg.mrf_epsilon)
    else:
        l_mrf = pred.new_zeros(())
    if cfg.weights.adv > 0:
        with torch.no_grad():
            s_real_g = disc(gt)
        _, l_adv = ralsgan_losses(s_real_g, disc(pred))
    else:
        l_adv = pred.new_zeros(())
    total = total_generator_loss(l_rec, l_feat, l_mrf, l_adv, cfg.weights)
    total.backward()
    opt_g.step()

    parts = {
        "rec": float(l_rec.detach()),
        "feat_rec": float(l_feat.detach()),
        "mrf": float(l_mrf.detach()),
        "adv": float(l_adv.detach()),
        "d": float(loss_d.detach()),
    }
    w = cfg.weights
    parts["total_g"] = (w.rec * parts["rec"] + w.feat_rec * parts["feat_rec"]
                        + w.mrf * parts["mrf"] + w.adv * parts["adv"])
    return parts


class Trainer:
    """Owns the models, optimizers, data stream and persistence for one run."""

    def __init__(self, cfg: TrainConfig, data_dir, out_dir,
                 resume: Optional[str] = None):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.deterministic:
            torch.use_deterministic_algorithms(True)
        torch.manual_seed(cfg.seed)

        geom = cfg.model.geometry()
        self.gen = Generator(cfg.model)
        self.disc = Discriminator(geom.h_full, geom.w_full)
        init_parameters(self.disc)
        self.extractor = FixedFeatureExtractor(cfg.extractor_seed)
        if cfg.extractor_weights:
            container = load_container(cfg.extractor_weights)
            apply_module_tensors(self.extractor, "extractor", container.tensors)
        self.opt_g = NamedAdam(dict(self.gen.named_parameters()), cfg.lr_g,
                               (cfg.beta1, cfg.beta2))
        self.opt_d = NamedAdam(dict(self.disc.named_parameters()), cfg.lr_d,
                               (cfg.beta1, cfg.beta2))
        self.dataset = OutpaintDataset(data_dir, geom, cfg.fill)
        self.step = 0
        self.resumed = False
        if resume is not None:
            self.load(resume)
            self.resumed = True

    # -- persistence --------------------------------------------------

    def checkpoint_tensors(self) -> Dict[str, torch.Tensor]:
        tensors = {}
        tensors.update(module_tensors(self.gen, "gen"))
        tensors.update(module_tensors(self.disc, "disc"))
        tensors.update(self.opt_g.state_tensors("opt_g"))
        tensors.update(self.opt_d.state_tensors("opt_d"))
        tensors["rng.torch"] = torch.get_rng_state()
        return tensors

    def save(self, path) -> None:
        meta = {"step": self.step, "seed": self.cfg.seed,
                "opt_g_t": self.opt_g.t, "opt_d_t": self.opt_d.t}
        save_container(path, self.checkpoint_tensors(), meta,
                       config_to_text(self.cfg))

    def load(self, path) -> None:
        container = load_container(path)
        apply_module_tensors(self.gen, "gen", container.tensors)
        apply_module_tensors(self.disc, "disc", container.tensors)
        self.opt_g.load_state_tensors("opt_g", container.tensors,
                                      container.meta["opt_g_t"])
        self.opt_d.load_state_tensors("opt_d", container.tensors,
                                      container.meta["opt_d_t"])
        if "rng.torch" in container.tensors:
            torch.set_rng_state(container.tensors["rng.torch"].to(torch.uint8))
        self.step = int(container.meta["step"])

    # -- the loop -----------------------------------------------------

    def run(self, progress: Optional[Callable[[int, Dict[str, float]], None]] = None,
            log_every: int = 50) -> Path:
        cfg = self.cfg
        # Resumed runs reseed the shuffle from the step counter so the
        # continuation is deterministic without replaying old epochs.
        stream = batch_stream(self.dataset, cfg.batch,
                              seed=cfg.seed + 7919 * self.step)
        trace_path = self.out_dir / "loss_trace.csv"
        mode = "a" if (self.resumed and trace_path.exists()) else "w"
        with open(trace_path, mode, newline="") as fh:
            writer = csv.writer(fh)
            if mode == "w":
                writer.writerow(TRACE_COLUMNS)
            while self.step < cfg.steps:
                batch = next(stream)
                try:
                    parts = train_step(batch, self.gen, self.disc,
                                       self.extractor, self.opt_g, self.opt_d, cfg)
                except TrainingError as exc:
                    raise TrainingError(f"step {self.step + 1}: {exc}") from exc
                self.step += 1
                writer.writerow([self.step] + [repr(parts[c]) for c in
                                               TRACE_COLUMNS[1:]])
                fh.flush()
                if progress and (self.step % log_every == 0
                                 or self.step == cfg.steps):
                    progress(self.step, parts)
                if self.step % cfg.checkpoint_interval == 0 and \
                        self.step < cfg.steps:
                    self.save(self.out_dir / f"step_{self.step:06d}.ckpt")
        final = self.out_dir / "final.ckpt"
        self.save(final)
        return final
