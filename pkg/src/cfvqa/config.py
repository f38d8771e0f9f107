"""Pipeline configuration: nested dataclasses, JSON files, dotted overrides.

Unknown keys (in files or --set overrides) are rejected, never ignored.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .adversary import DiscriminatorConfig
from .cf_generator import GeneratorConfig
from .scenes import GenConfig
from .training import TrainConfig
from .vqa_core import VQAConfig, VQATrainConfig


class ConfigError(Exception):
    """Bad key, unparsable value, or inconsistent configuration."""


@dataclass
class EvalSettings:
    split: str = "val"
    k_per_qtype: int = 4


@dataclass
class ServeSettings:
    addr: str = "127.0.0.1:8765"


@dataclass
class PipelineConfig:
    data: GenConfig = field(default_factory=GenConfig)
    vqa_model: VQAConfig = field(default_factory=VQAConfig)
    vqa_train: VQATrainConfig = field(default_factory=VQATrainConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    cf_train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    serve: ServeSettings = field(default_factory=ServeSettings)

    def validate(self):
        if self.generator.d_q != self.vqa_model.d_q or self.generator.d_z != self.vqa_model.d_z:
            raise ConfigError(
                "generator conditioning dims must match the VQA model "
                f"(d_q {self.generator.d_q} vs {self.vqa_model.d_q}, "
                f"d_z {self.generator.d_z} vs {self.vqa_model.d_z})"
            )
        sizes = {self.data.image_size, self.vqa_model.image_size,
                 self.generator.image_size, self.discriminator.image_size}
        if len(sizes) != 1:
            raise ConfigError(f"image_size must agree across sections, got {sorted(sizes)}")
        return self


def to_dict(cfg):
    if dataclasses.is_dataclass(cfg):
        out = {}
        for f in dataclasses.fields(cfg):
            out[f.name] = to_dict(getattr(cfg, f.name))
        return out
    if isinstance(cfg, tuple):
        return list(cfg)
    if isinstance(cfg, dict):
        return {k: to_dict(v) for k, v in cfg.items()}
    return cfg


def _coerce(raw, current, key):
    """Parse a string override against the current field value's type."""
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from e
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from e
    if isinstance(current, tuple):
        try:
            parts = json.loads(raw) if raw.strip().startswith("[") else [p for p in raw.split(",") if p]
            return tuple(type(current[0])(p) for p in parts) if current else tuple(parts)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{key}: cannot parse tuple from {raw!r}") from e
    if isinstance(current, dict):
        try:
            parsed = json.loads(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: cannot parse JSON object from {raw!r}") from e
        if not isinstance(parsed, dict):
            raise ConfigError(f"{key}: expected a JSON object, got {raw!r}")
        return parsed
    return raw  # strings pass through


def apply_override(cfg: PipelineConfig, dotted_key, raw_value):
    parts = dotted_key.split(".")
    target = cfg
    for i, part in enumerate(parts[:-1]):
        if not dataclasses.is_dataclass(target) or part not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config key {dotted_key!r} (no section {'.'.join(parts[: i + 1])!r})")
        target = getattr(target, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(target) or leaf not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config key {dotted_key!r}")
    current = getattr(target, leaf)
    setattr(target, leaf, _coerce(raw_value, current, dotted_key))
    return cfg


def _apply_file_section(obj, data, prefix=""):
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix + key!r} must be an object")
            _apply_file_section(current, value, prefix=f"{prefix}{key}.")
        elif isinstance(current, tuple):
            setattr(obj, key, tuple(value))
        else:
            setattr(obj, key, value)


def load_config(path=None, overrides=(), seed=None):
    """Build the pipeline config from defaults, optional JSON file, and
    dotted key=value overrides, in that order. seed, when given, is applied
    to every stage's seed field."""
    cfg = PipelineConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except ValueError as e:
            raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
        _apply_file_section(cfg, data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        apply_override(cfg, key.strip(), value.strip())
    if seed is not None:
        cfg.vqa_train.seed = seed
        cfg.cf_train.seed = seed
    # dataclasses with __post_init__ validation were bypassed by setattr
    TrainConfig(**{f.name: getattr(cfg.cf_train, f.name) for f in dataclasses.fields(TrainConfig)})
    return cfg.validate()
