"""Run configuration: a YAML key/value tree merged with CLI flags.

Precedence: built-in defaults < config file < command-line flags.  Every
command validates its resolved configuration before doing any work and
writes the resolved tree next to its outputs for provenance.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import yaml

from .corpus import ROLES
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus_dir: str | None = None
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    stopwords_path: str | None = None
    token_mode: str = "whitespace"
    min_count: int = 1
    beam: int = 1
    bleu_mean: str = "arithmetic"
    out_dir: str = "runs/out"

    def resolved_paths(self):
        """Fill train/dev/test from `corpus_dir` when unset."""
        train, dev, test = self.train_path, self.dev_path, self.test_path
        if self.corpus_dir:
            train = train or os.path.join(self.corpus_dir, "train.jsonl")
            dev = dev or os.path.join(self.corpus_dir, "dev.jsonl")
            test = test or os.path.join(self.corpus_dir, "test.jsonl")
        return train, dev, test

    def validate_for_training(self) -> None:
        train, _, _ = self.resolved_paths()
        if not train:
            raise ConfigError(
                "no training corpus given; pass --corpus-dir or --train-path")
        if not os.path.exists(train):
            raise ConfigError(
                f"training corpus not found: {train} "
                "(generate one with `topicsum gen-data`)")
        if self.token_mode not in ("whitespace", "char"):
            raise ConfigError(
                f"token_mode must be 'whitespace' or 'char', got "
                f"{self.token_mode!r}")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")
        for role in self.train.roles_enabled:
            if role not in ROLES:
                raise ConfigError(f"unknown role {role!r} in roles_enabled")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        train = data.pop("train", {})
        known = {f.name for f in dataclasses.fields(cls) if f.name != "train"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(
                f"unknown config keys: {sorted(unknown)}; known keys: "
                f"{sorted(known | {'train'})}")
        return cls(train=TrainConfig.from_dict(train), **data)


def load_config_file(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return RunConfig.from_dict(data)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply flag overrides (None values are 'not given')."""
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    run_fields = {f.name for f in dataclasses.fields(RunConfig)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in train_fields:
            setattr(cfg.train, key, value)
        elif key in run_fields:
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"unknown option {key!r}")
    return cfg


def write_resolved_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
