"""Run configuration: dataclasses, JSON round-trip, canonical hashing.

A run is described by four blocks: model architecture, training schedule,
prior-variant toggles, and scoring options.  Ablation variants are expressed
purely as configuration overrides (see :data:`VARIANTS`), never as code forks.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "VariantConfig",
    "ScoreConfig",
    "RunConfig",
    "VARIANTS",
    "apply_variant",
    "config_hash",
]


@dataclass
class ModelConfig:
    n_blocks: int = 12
    pos_dim: int = 256
    hidden: int | None = None  # None: 2 * max(d, 64) per level
    clamp_alpha: float = 1.9
    perm_mode: str = "hard"  # or "orthogonal"
    pos_mode: str = "auto"  # sinusoidal | zeros | auto (zeros for 1x1 grids)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 2e-4
    weight_decay: float = 1e-4
    lr_drop_epochs: tuple[int, ...] = (48, 57, 88)
    lr_drop_factor: float = 0.1
    warmup_epochs: int = 5
    lambda1: float = 1.0
    lambda2: float = 100.0
    n_intra: int = 10
    intra_init_scale: float = 0.5  # stddev of sub-center offset init
    seed: int = 0
    precision: str = "f32"  # f32 | f64
    grad_clip: float = 100.0
    eval_every: int = 10

    def dtype(self):
        if self.precision == "f32":
            return np.float32
        if self.precision == "f64":
            return np.float64
        raise ValueError(f"unknown precision {self.precision!r}")


@dataclass
class VariantConfig:
    y_effective: int | None = None  # collapse labels to this many classes
    freeze_centers: bool = False  # centers and class logits stay at init


@dataclass
class ScoreConfig:
    normalization: str = "exp-shift"  # or "minmax"
    entropy_sign: str = "asis"  # or "negated"
    image_score: str = "max"  # or "topq"
    top_q: float = 0.03
    entropy_include_weights: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    variant: VariantConfig = field(default_factory=VariantConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"]["lr_drop_epochs"] = list(self.train.lr_drop_epochs)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        cfg = cls()
        sections = {
            "model": (cfg.model, ModelConfig),
            "train": (cfg.train, TrainConfig),
            "variant": (cfg.variant, VariantConfig),
            "score": (cfg.score, ScoreConfig),
        }
        for sec_name, sec_raw in raw.items():
            if sec_name not in sections:
                raise KeyError(f"unknown config section {sec_name!r}")
            target, klass = sections[sec_name]
            valid = {f.name for f in dataclasses.fields(klass)}
            for key, value in sec_raw.items():
                if key not in valid:
                    raise KeyError(f"unknown key {sec_name}.{key}")
                if key == "lr_drop_epochs":
                    value = tuple(int(v) for v in value)
                setattr(target, key, value)
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def config_hash(cfg) -> str:
    """Hex digest of the canonical JSON form; accepts RunConfig or its dict."""
    raw = cfg.to_dict() if isinstance(cfg, RunConfig) else cfg
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# Ablation axis, weakest to strongest prior structure.  Every entry is a set
# of config overrides on top of the caller's base RunConfig.
#   single-center:    one shared latent center, no class information
#   fixed-centers:    one frozen center per class, no attraction loss
#   class-centers:    trainable per-class centers, likelihood only
#   class-centers-mi: adds the posterior-sharpening class loss
#   full:             adds within-class sub-centers and their losses
VARIANTS: dict[str, dict] = {
    "single-center": {"variant": {"y_effective": 1}, "train": {"n_intra": 1}},
    "fixed-centers": {
        "variant": {"freeze_centers": True},
        "train": {"lambda2": 0.0, "n_intra": 1},
    },
    "class-centers": {"train": {"lambda2": 0.0, "n_intra": 1}},
    "class-centers-mi": {"train": {"n_intra": 1}},
    "full": {},
}


def apply_variant(cfg: RunConfig, name: str) -> RunConfig:
    if name not in VARIANTS:
        raise KeyError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    merged = cfg.to_dict()
    for section, overrides in VARIANTS[name].items():
        merged[section].update(overrides)
    return RunConfig.from_dict(merged)
