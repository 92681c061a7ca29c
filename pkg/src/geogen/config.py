"""Flat, typed pipeline configuration with a schema version and content hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


@dataclass
class PipelineConfig:
    schema_version: int = SCHEMA_VERSION
    dataset_path: str = ""
    dataset_format: str = "foursquare"
    out_dir: str = "runs/geogen"
    seed: int = 0

    duration_seconds: float = 604800.0   # one-week windows
    interval_seconds: float = 3600.0
    min_traj_len: int = 10
    gamma: int = 1
    max_filtered_len: int = 75
    split_train: float = 0.7
    split_val: float = 0.2
    split_test: float = 0.1

    stage1_steps: int = 1000
    stage1_beta1: float = 1e-4
    stage1_beta_n: float = 0.02
    stage1_epochs: int = 500
    stage1_batch: int = 32
    stage1_lr: float = 2e-4
    stage1_ema_rate: float = 0.9
    stage1_val_every: int = 10
    stage1_ckpt_every: int = 50
    unet_base_channels: int = 128
    unet_channel_multipliers: tuple[int, ...] = (1, 2, 2, 2)
    unet_res_blocks: int = 2
    unet_attention_level: int = -1       # -1 selects the level with length nearest 16
    unet_pool_kernels: tuple[int, ...] = (2, 4, 8)
    unet_bias_embed_dim: int = 32

    stage2_epochs: int = 100
    stage2_batch: int = 16
    stage2_lr: float = 1e-3
    stage2_grad_clip: float = 1.0
    stage2_plateau_factor: float = 0.5
    stage2_plateau_patience: int = 5
    c2f_model_dim: int = 64
    c2f_heads: int = 4
    c2f_enc_layers: int = 4
    c2f_dec_layers: int = 2
    c2f_ff_dim: int = 256
    c2f_t2v_dim: int = 16
    c2f_tau_s: float = 0.25
    c2f_dropout: float = 0.0
    c2f_events_per_latent: int = 6

    eval_bins: int = 100
    eval_density_cell_deg: float = 0.005

    def __post_init__(self):
        for name in ("stage1_lr", "stage2_lr", "stage1_ema_rate", "interval_seconds", "duration_seconds"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("stage1_val_every", "stage1_ckpt_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if abs(self.split_train + self.split_val + self.split_test - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        self.unet_channel_multipliers = tuple(self.unet_channel_multipliers)
        self.unet_pool_kernels = tuple(self.unet_pool_kernels)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["unet_channel_multipliers"] = list(self.unet_channel_multipliers)
        d["unet_pool_kernels"] = list(self.unet_pool_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema version {d.get('schema_version')}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def content_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.split_train, self.split_val, self.split_test)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Named substream of the run's root seed; stable across processes."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
