"""Run configuration: nested dataclasses read from / written to JSON with strict key checking."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .hfim import HfimConfig
from .model import ABLATIONS, ModelConfig, UnknownAblation


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    alpha: float = 10.0
    learning_rate: float = 5e-5
    head_learning_rate: float | None = None   # separate rate for non-backbone params; off by default
    weight_decay: float = 1e-2
    warmup_ratio: float = 0.1
    grad_clip: float = 1.0
    epochs: int = 120
    batch_size: int = 16
    seed: int = 42
    ablation: str = "full"
    dataset: str = "14lap"
    data_dir: str = "data"
    run_name: str = "run"

    def validate(self) -> None:
        if self.ablation not in ABLATIONS:
            raise UnknownAblation(f"unknown ablation {self.ablation!r}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigError("warmup_ratio must be in [0, 1)")
        self.model.encoder.validate()
        self.model.hfim.validate()
        if self.model.max_span_length < 1:
            raise ConfigError("max_span_length must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = hints[key]
        if dataclasses.is_dataclass(sub):
            kwargs[key] = _build(sub, value, f"{where}.{key}".lstrip("."))
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    return config_from_dict(json.loads(Path(path).read_text()))


def toy_config(**overrides) -> RunConfig:
    """Small CPU-sized configuration used by tests and the fixture runs."""
    cfg = RunConfig(
        model=ModelConfig(
            encoder=EncoderConfig(backbone="toy", hidden_bert=64, hidden_lstm_half=32, dropout=0.1,
                                  self_attention_heads=4, toy_vocab_size=512, toy_heads=4, toy_max_positions=128),
            hfim=HfimConfig(sem_heads=4),
            fused_dim=64, width_dim=8, pair_width_dim=8, classifier_hidden=64, classifier_dropout=0.0,
        ),
        learning_rate=3e-3, warmup_ratio=0.0, epochs=200, batch_size=16, seed=13, run_name="toy",
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
