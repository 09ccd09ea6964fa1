"""Run configuration: one flat JSON file, strict about unknown fields."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .text import MAX_CAPTION_LEN, MIN_CAPTION_LEN


class ConfigError(Exception):
    """Invalid configuration; the CLI maps this to exit code 2."""


@dataclass
class Config:
    # corpus
    corpus_count: int = 2000
    canvas_size: int = 32
    caption_verbosity: str = "long"
    caption_len: int | None = None
    # semantic-encoder pretraining
    pretrain_epochs: int = 30
    pretrain_learning_rate: float = 0.2
    pretrain_batch_size: int = 32
    semantic_dim: int = 32
    # training
    steps: int = 1000
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    lambda1: float = 0.5
    lambda2: float = 1.0
    lambda3: float = 0.5
    temperature: float = 0.07
    embed_dim: int = 32
    checkpoint_interval: int = 250
    symmetric_contrastive: bool = False
    denoiser_hidden: int = 16
    # sampling
    sample_count: int | None = None

    def validate(self) -> "Config":
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.timesteps < 2:
            raise ConfigError(f"timesteps must be >= 2, got {self.timesteps}")
        if not (0 < self.beta_start <= self.beta_end < 1):
            raise ConfigError(
                f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.corpus_count < 0:
            raise ConfigError(f"corpus_count must be >= 0, got {self.corpus_count}")
        if self.canvas_size < 8 or (self.canvas_size & (self.canvas_size - 1)) != 0:
            raise ConfigError(f"canvas_size must be a power of two >= 8, got {self.canvas_size}")
        if self.caption_verbosity not in ("short", "medium", "long"):
            raise ConfigError(f"caption_verbosity {self.caption_verbosity!r} invalid")
        if self.caption_len is not None and not (MIN_CAPTION_LEN <= self.caption_len <= MAX_CAPTION_LEN):
            raise ConfigError(
                f"caption_len must lie in [{MIN_CAPTION_LEN}, {MAX_CAPTION_LEN}], got {self.caption_len}")
        if self.pretrain_epochs < 0:
            raise ConfigError(f"pretrain_epochs must be >= 0, got {self.pretrain_epochs}")
        if self.pretrain_learning_rate <= 0:
            raise ConfigError(f"pretrain_learning_rate must be > 0, got {self.pretrain_learning_rate}")
        if self.pretrain_batch_size < 1:
            raise ConfigError(f"pretrain_batch_size must be >= 1, got {self.pretrain_batch_size}")
        if self.semantic_dim < 1:
            raise ConfigError(f"semantic_dim must be >= 1, got {self.semantic_dim}")
        if self.denoiser_hidden < 1:
            raise ConfigError(f"denoiser_hidden must be >= 1, got {self.denoiser_hidden}")
        if self.checkpoint_interval < 1:
            raise ConfigError(f"checkpoint_interval must be >= 1, got {self.checkpoint_interval}")
        if self.sample_count is not None and self.sample_count < 1:
            raise ConfigError(f"sample_count must be >= 1, got {self.sample_count}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_dict(data: dict) -> Config:
    known = {f.name for f in dataclasses.fields(Config)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
    try:
        cfg = Config(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path) -> Config:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return config_from_dict(data)
