"""Run configuration: one flat dataclass, a key=value file loader, and overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    h: int = 64                     # vector width H
    encoder_layers: int = 2
    encoder_heads: int = 4
    executor_layers: int = 2
    executor_heads: int = 4
    max_tokens: int = 512
    max_chars: int = 10000
    max_args: int = 16
    max_contexts: int = 64
    batch_size: int = 16
    lambda_cap_per_batch: int = 128
    k_negatives: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_frac: float = 0.05
    epochs: int = 3
    seed: int = 0
    jobs: int = 0                   # worker threads; 0 means batch_size // 2
    vocab_size: int = 2048
    oov_buckets: int = 64
    samples_per_batch: int = 64
    ffn_mult: int = 4
    l2_negative_mode: str = "single_arg"   # or "full_list"

    def validate(self) -> "Config":
        positive = ["h", "encoder_layers", "encoder_heads", "executor_layers",
                    "executor_heads", "max_tokens", "max_chars", "max_args",
                    "max_contexts", "batch_size", "lambda_cap_per_batch",
                    "k_negatives", "epochs", "vocab_size", "oov_buckets",
                    "samples_per_batch", "ffn_mult"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay non-negative")
        if not 0 <= self.warmup_frac < 1:
            raise ConfigError("warmup_frac must be in [0, 1)")
        if self.h % self.encoder_heads or self.h % self.executor_heads:
            raise ConfigError("h must be divisible by the head counts")
        if self.jobs < 0:
            raise ConfigError("jobs must be non-negative")
        if self.k_negatives < 2:
            raise ConfigError("k_negatives must be at least 2")
        if self.l2_negative_mode not in ("single_arg", "full_list"):
            raise ConfigError("l2_negative_mode must be single_arg or full_list")
        return self

    @property
    def pool_size(self) -> int:
        size = self.batch_size // 2 or 1
        if self.jobs:
            size = min(size, self.jobs)
        return size

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replaced(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw).validate()


_FIELDS = {f.name: f.type for f in dataclasses.fields(Config)}


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if raw and raw[0] in "'\"" and raw[-1:] == raw[0]:
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    ftype = _FIELDS.get(name)
    try:
        if ftype == "float":
            return float(raw)
        return int(raw)
    except ValueError:
        try:
            return float(raw)
        except ValueError:
            return raw


def apply_overrides(cfg: Config, pairs: dict[str, str]) -> Config:
    values = {}
    for key, raw in pairs.items():
        key = key.strip().lower()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        value = _parse_value(key, raw) if isinstance(raw, str) else raw
        expected = _FIELDS[key]
        if expected == "int" and not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {raw!r}")
        if expected == "float" and not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {raw!r}")
        values[key] = value
    try:
        return dataclasses.replace(cfg, **values).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config_file(path: str) -> dict[str, str]:
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = text.split("=", 1)
            pairs[key.strip()] = raw.strip()
    return pairs


def config_from(file_path: str | None = None, overrides: dict | None = None) -> Config:
    cfg = Config()
    if file_path:
        cfg = apply_overrides(cfg, load_config_file(file_path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()
