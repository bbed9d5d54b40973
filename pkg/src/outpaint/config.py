"""Configuration: model geometry/architecture and training settings.

The on-disk format is a plain INI file with the sections [geometry],
[model], [train], [loss] and [mrf]; every key is documented in the README
and unknown keys are rejected.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from typing import Tuple

from .errors import ConfigError
from .geometry import OutpaintGeometry
from .losses import LossWeights


@dataclass(frozen=True)
class ModelConfig:
    center_h: int = 32
    center_w: int = 32
    margin: int = 8
    patch: int = 2
    embed_dim: int = 16
    depths: Tuple[int, ...] = (2, 2)
    heads: Tuple[int, ...] = (2, 4)
    window: int = 4

    def __post_init__(self):
        if len(self.depths) != len(self.heads):
            raise ConfigError("depths and heads must have equal length")
        if any(d <= 0 or d % 2 != 0 for d in self.depths):
            raise ConfigError(f"stage depths must be positive and even: {self.depths}")
        for i, h in enumerate(self.heads):
            dim = self.embed_dim * (2 ** i)
            if h <= 0 or dim % h != 0:
                raise ConfigError(
                    f"stage {i}: channels {dim} not divisible by heads {h}")
        if self.window < 1 or self.patch < 1 or self.embed_dim < 1:
            raise ConfigError("window, patch and embed_dim must be positive")
        self.geometry()  # validates divisibility

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    @property
    def downsample(self) -> int:
        return self.patch * (2 ** (self.num_stages - 1))

    @property
    def bottleneck_channels(self) -> int:
        return self.embed_dim * (2 ** (self.num_stages - 1))

    @property
    def bottleneck_heads(self) -> int:
        return self.heads[-1]

    @property
    def ring(self) -> int:
        return self.margin // self.downsample

    def geometry(self, steps: int = 1) -> OutpaintGeometry:
        try:
            geom = OutpaintGeometry(self.center_h, self.center_w,
                                    self.margin, self.downsample)
        except Exception as exc:
            raise ConfigError(str(exc)) from exc
        return geom if steps == 1 else geom.scaled(steps)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch: int = 4
    steps: int = 2000
    # desk-scale balance: the critic memorizes tiny datasets instantly at
    # equal rates, which stalls reconstruction, so it learns far slower
    lr_g: float = 2e-3
    lr_d: float = 1e-5
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    deterministic: bool = False
    checkpoint_interval: int = 500
    fill: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)
    mrf_bandwidth: float = 0.5
    mrf_epsilon: float = 1e-5
    extractor_seed: int = 0
    extractor_weights: str = ""

    def __post_init__(self):
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be >= 1")


def toy_config(**overrides) -> TrainConfig:
    """Desk-scale defaults: 48px image, 32px center, 8px margin."""
    return TrainConfig(model=ModelConfig(), **overrides)


def full_config() -> ModelConfig:
    """Full-scale architecture: 192px image, 128px center, 32px margin."""
    return ModelConfig(center_h=128, center_w=128, margin=32, patch=4,
                       embed_dim=96, depths=(2, 2, 6, 2), heads=(3, 6, 12, 24),
                       window=7)


_SCHEMA = {
    "geometry": {"center_height", "center_width", "margin"},
    "model": {"patch", "embed_dim", "depths", "heads", "window"},
    "train": {"batch", "steps", "lr_g", "lr_d", "beta1", "beta2", "seed",
              "deterministic", "checkpoint_interval", "fill"},
    "loss": {"rec", "feat_rec", "mrf", "adv"},
    "mrf": {"bandwidth", "epsilon", "extractor_seed", "extractor_weights"},
}


def _int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


def parse_config_text(text: str) -> TrainConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")

    def get(section, key, cast, default):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            if cast is bool:
                return parser.getboolean(section, key)
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}={raw!r}: {exc}") from exc

    dm = ModelConfig()
    dw = LossWeights()
    dt = TrainConfig()
    try:
        model = ModelConfig(
            center_h=get("geometry", "center_height", int, dm.center_h),
            center_w=get("geometry", "center_width", int, dm.center_w),
            margin=get("geometry", "margin", int, dm.margin),
            patch=get("model", "patch", int, dm.patch),
            embed_dim=get("model", "embed_dim", int, dm.embed_dim),
            depths=get("model", "depths", _int_list, dm.depths),
            heads=get("model", "heads", _int_list, dm.heads),
            window=get("model", "window", int, dm.window),
        )
        weights = LossWeights(
            rec=get("loss", "rec", float, dw.rec),
            feat_rec=get("loss", "feat_rec", float, dw.feat_rec),
            mrf=get("loss", "mrf", float, dw.mrf),
            adv=get("loss", "adv", float, dw.adv),
        )
        return TrainConfig(
            model=model,
            batch=get("train", "batch", int, dt.batch),
            steps=get("train", "steps", int, dt.steps),
            lr_g=get("train", "lr_g", float, dt.lr_g),
            lr_d=get("train", "lr_d", float, dt.lr_d),
            beta1=get("train", "beta1", float, dt.beta1),
            beta2=get("train", "beta2", float, dt.beta2),
            seed=get("train", "seed", int, dt.seed),
            deterministic=get("train", "deterministic", bool, dt.deterministic),
            checkpoint_interval=get("train", "checkpoint_interval", int,
                                    dt.checkpoint_interval),
            fill=get("train", "fill", float, dt.fill),
            weights=weights,
            mrf_bandwidth=get("mrf", "bandwidth", float, dt.mrf_bandwidth),
            mrf_epsilon=get("mrf", "epsilon", float, dt.mrf_epsilon),
            extractor_seed=get("mrf", "extractor_seed", int, dt.extractor_seed),
            extractor_weights=get("mrf", "extractor_weights", str,
                                  dt.extractor_weights),
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def config_to_text(cfg: TrainConfig) -> str:
    """Canonical INI serialization (used for checkpoint snapshots)."""
    parser = configparser.ConfigParser()
    m = cfg.model
    parser["geometry"] = {
        "center_height": str(m.center_h),
        "center_width": str(m.center_w),
        "margin": str(m.margin),
    }
    parser["model"] = {
        "patch": str(m.patch),
        "embed_dim": str(m.embed_dim),
        "depths": ", ".join(str(d) for d in m.depths),
        "heads": ", ".join(str(h) for h in m.heads),
        "window": str(m.window),
    }
    parser["train"] = {
        "batch": str(cfg.batch),
        "steps": str(cfg.steps),
        "lr_g": repr(cfg.lr_g),
        "lr_d": repr(cfg.lr_d),
        "beta1": repr(cfg.beta1),
        "beta2": repr(cfg.beta2),
        "seed": str(cfg.seed),
        "deterministic": str(cfg.deterministic).lower(),
        "checkpoint_interval": str(cfg.checkpoint_interval),
        "fill": repr(cfg.fill),
    }
    parser["loss"] = {
        "rec": repr(cfg.weights.rec),
        "feat_rec": repr(cfg.weights.feat_rec),
        "mrf": repr(cfg.weights.mrf),
        "adv": repr(cfg.weights.adv),
    }
    parser["mrf"] = {
        "bandwidth": repr(cfg.mrf_bandwidth),
        "epsilon": repr(cfg.mrf_epsilon),
        "extractor_seed": str(cfg.extractor_seed),
        "extractor_weights": cfg.extractor_weights,
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
