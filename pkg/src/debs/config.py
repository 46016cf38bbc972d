"""Configuration dataclasses, named profiles and canonical hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Any

from .errors import ConfigError


@dataclass(frozen=True)
class EncoderConfig:
    input_len: int = 1000
    patch_size: int = 20
    depth: int = 6
    heads: int = 4
    model_dim: int = 128
    mlp_hidden: int = 512

    def __post_init__(self):
        if self.input_len % self.patch_size:
            raise ConfigError(f"input_len {self.input_len} not divisible by patch_size {self.patch_size}")
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if min(self.depth, self.heads, self.model_dim, self.mlp_hidden) < 1:
            raise ConfigError("encoder sizes must be positive")

    @property
    def n_tokens(self) -> int:
        return self.input_len // self.patch_size


@dataclass(frozen=True)
class HeadConfig:
    proj_dim: int = 256
    pred_hidden: int = 64
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.995
    alpha: float = 0.1
    window_segments: int = 15
    total_iters: int = 25_000
    phase_switch_iter: int = 15_000
    batch_size: int = 256
    lr: float = 3e-4
    weight_decay: float = 1.5e-6
    seed: int = 0
    mode: str = "debs"
    symmetric: bool = False
    reset_optimizer: bool = False
    constrain_pairs: bool = False
    use_predictor: bool = True
    eval_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if not 0 < self.phase_switch_iter < self.total_iters:
            raise ConfigError("need 0 < phase_switch_iter < total_iters")
        if self.window_segments < 2:
            raise ConfigError("window_segments must be >= 2")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch-norm needs batch statistics)")
        if self.mode not in ("debs", "similarity-only"):
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class DataSpec:
    """Synthetic cohort recipe (see :mod:`debs.data`)."""

    n_subjects: int = 16
    segments_per_subject: int = 60
    sampling_rate: int = 125
    segment_len: int = 1000
    seed: int = 0
    event_prob: float = 1.0
    event_strength: float = 1.5
    wander_scale: float = 0.3
    min_block: int = 8
    max_block: int = 16


@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSpec = field(default_factory=DataSpec)
    train_data: str | None = None
    probe_train_data: str | None = None
    probe_eval_data: str | None = None
    out_dir: str = "runs/debs"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def model_hash(self) -> str:
        """Hash of everything that shapes the training trajectory (paths excluded)."""
        core = {"encoder": asdict(self.encoder), "heads": asdict(self.heads), "train": asdict(self.train)}
        blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        sections = {"encoder": EncoderConfig, "heads": HeadConfig, "train": TrainConfig, "data": DataSpec}
        kwargs: dict[str, Any] = {}
        for key, value in d.items():
            if key in sections:
                kwargs[key] = _build(sections[key], value)
            elif key in {f.name for f in dataclasses.fields(cls)}:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**kwargs)

    def override(self, **sections: dict[str, Any]) -> "RunConfig":
        """Return a copy with per-section field overrides, e.g. ``train={"seed": 3}``."""
        d = self.to_dict()
        for key, value in sections.items():
            if isinstance(value, dict):
                d[key].update(value)
            else:
                d[key] = value
        return RunConfig.from_dict(d)


def _build(kind, values: dict[str, Any]):
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {kind.__name__} fields: {sorted(unknown)}")
    return kind(**values)


def full_profile() -> RunConfig:
    return RunConfig()


def toy_profile() -> RunConfig:
    """Desk-scale profile: small encoder, 2K + 2K iterations."""
    return RunConfig(
        encoder=EncoderConfig(depth=2, heads=4, model_dim=32, mlp_hidden=128),
        heads=HeadConfig(proj_dim=64, pred_hidden=16),
        train=TrainConfig(total_iters=4000, phase_switch_iter=2000, batch_size=32, lr=1e-3),
        out_dir="runs/toy",
    )


PROFILES = {"full": full_profile, "toy": toy_profile}
