"""Experiment configuration: TOML file loading, overrides, validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

TASKS = (
    "generate",
    "generate-controlled",
    "recover",
    "predict-next",
    "predict-long",
    "predict-sparse",
)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    # diffusion schedule (desk-scale default; the full-fidelity run uses
    # T=1000 with beta in [1e-4, 0.02])
    T: int = 50
    beta_start: float = 2e-3
    beta_end: float = 0.4
    # classifier-free guidance
    omega: float = 1.0
    lambda_uncond: float = 0.1
    # mask mixture (random, terminal, complete, sequential, circadian)
    mask_weights: tuple = (0.25, 0.20, 0.20, 0.20, 0.15)
    random_ratio: float = 0.3
    sequential_ratio: float = 0.25
    terminal_horizon: int = 1
    # model dims
    embed_dim: int = 32
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    conv_channels: int = 32
    context_dim: int = 32
    # training
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 15
    grad_clip: float = 1.0
    history_stride: int = 2  # hourly history sampling at 30-min slots
    # location embedding training
    embed_k_nearest: int = 8
    embed_epochs: int = 30
    embed_negatives: int = 5
    embed_lr: float = 0.05
    # conditional controller
    flow_layers: int = 4
    flow_hidden: int = 64
    flow_steps: int = 400
    flow_lr: float = 1e-3
    # evaluation
    decode_k: int = 10
    # optional paths (CLI flags take precedence)
    data_path: str = ""
    embedding_path: str = ""
    checkpoint_path: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.T < 1 or not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError("invalid schedule parameters")
        if self.omega < 0 or not 0 <= self.lambda_uncond <= 1:
            raise ValueError("invalid guidance parameters")
        if len(self.mask_weights) != 5:
            raise ValueError("mask_weights needs 5 entries")
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ValueError("invalid training parameters")
        if self.history_stride < 1 or self.decode_k < 1:
            raise ValueError("invalid history_stride/decode_k")
        object.__setattr__(self, "mask_weights", tuple(float(w) for w in self.mask_weights))

    def hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value):
    if name not in _FIELDS:
        raise ValueError(f"unknown config key {name!r}")
    default = getattr(ExperimentConfig, name)
    if isinstance(default, tuple) or name == "mask_weights":
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        return tuple(float(v) for v in value)
    if isinstance(default, bool):
        return value in (True, "true", "1")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Build a config from an optional TOML file plus key=value overrides.

    Unknown keys are rejected. The GENMOVE_SEED environment variable, when
    set, takes precedence over both the file and the overrides.
    """
    values: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        for key, value in raw.items():
            values[key] = _coerce(key, value)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like key=value")
        key, _, value = item.partition("=")
        values[key.strip()] = _coerce(key.strip(), value.strip())
    env_seed = os.environ.get("GENMOVE_SEED")
    if env_seed is not None:
        values["seed"] = int(env_seed)
    return ExperimentConfig(**values)


@dataclass(frozen=True)
class TaskSpec:
    task: str
    horizon: int = 8
    missing_ratio: float = 0.2
    radius_target: float | None = None
    sample_count: int | None = None
    omega: float | None = None  # None -> per-task default
    generation_context: str = "null"  # "null" or "flow"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; valid: {TASKS}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0 < self.missing_ratio < 1:
            raise ValueError("missing_ratio must lie in (0, 1)")
        if self.generation_context not in ("null", "flow"):
            raise ValueError("generation_context must be 'null' or 'flow'")
        if self.task == "generate-controlled" and self.radius_target is None:
            raise ValueError("generate-controlled requires radius_target")
