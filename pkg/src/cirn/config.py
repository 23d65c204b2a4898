"""Run configuration: JSON file plus dotted ``key=value`` overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from .encoder import EncoderConfig
from .errors import ConfigError
from .features import DenseNetConfig
from .model import ABLATIONS
from .trainer import TrainerConfig

SYNTHETIC_TASKS = ("subset_negation", "position_match", "keyword")


@dataclass(frozen=True)
class SyntheticConfig:
    task: str = "subset_negation"
    train_size: int = 200
    dev_size: int = 100
    vocab_size: int = 16
    length: int = 5

    def __post_init__(self):
        if self.task not in SYNTHETIC_TASKS:
            raise ConfigError(f"unknown synthetic task {self.task!r}; choose from {SYNTHETIC_TASKS}")


@dataclass(frozen=True)
class DataConfig:
    train: Optional[str] = None
    dev: Optional[str] = None
    auxiliary: Optional[str] = None
    auxiliary_fraction: float = 0.15
    min_frequency: int = 1
    max_vocab: Optional[int] = None
    synthetic: Optional[SyntheticConfig] = None

    def __post_init__(self):
        if self.train is None and self.synthetic is None:
            raise ConfigError("data needs either a train path or a synthetic task")
        if not 0 <= self.auxiliary_fraction <= 1:
            raise ConfigError("auxiliary_fraction must lie in [0, 1]")


# encoder fields that a config file may set; vocab_size comes from the data
ENCODER_KEYS = tuple(f.name for f in fields(EncoderConfig) if f.name != "vocab_size")


@dataclass(frozen=True)
class RunConfig:
    encoder: Dict[str, Any] = field(default_factory=dict)
    densenet: DenseNetConfig = field(default_factory=DenseNetConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: DataConfig = field(default_factory=lambda: DataConfig(synthetic=SyntheticConfig()))
    ablation: str = "none"
    out: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.encoder) - set(ENCODER_KEYS)
        if unknown:
            raise ConfigError(f"unknown encoder keys: {sorted(unknown)}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        opts = dict(self.encoder)
        if opts.get("max_positions") is None:
            opts["max_positions"] = 2 * self.trainer.max_sentence_len + 3
        return EncoderConfig(vocab_size=vocab_size, **opts)

    def to_dict(self) -> dict:
        return {
            "encoder": dict(self.encoder),
            "densenet": asdict(self.densenet),
            "trainer": asdict(self.trainer),
            "data": asdict(self.data),
            "ablation": self.ablation,
            "out": self.out,
            "seed": self.seed,
        }


def _build(cls, obj, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**obj)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(obj: dict) -> RunConfig:
    top = {"encoder", "densenet", "trainer", "data", "ablation", "out", "seed"}
    unknown = set(obj) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    data = dict(obj.get("data", {"synthetic": {}}))
    if data.get("synthetic") is not None:
        data["synthetic"] = _build(SyntheticConfig, data["synthetic"], "data.synthetic")
    seed = int(obj.get("seed", 0))
    trainer = dict(obj.get("trainer", {}))
    trainer["seed"] = seed
    return RunConfig(
        encoder=dict(obj.get("encoder", {})),
        densenet=_build(DenseNetConfig, obj.get("densenet", {}), "densenet"),
        trainer=_build(TrainerConfig, trainer, "trainer"),
        data=_build(DataConfig, data, "data"),
        ablation=obj.get("ablation", "none"),
        out=obj.get("out", "runs/default"),
        seed=seed,
    )


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(obj: dict, overrides: List[str]) -> dict:
    """Apply ``section.key=value`` assignments; values are parsed as JSON when possible."""
    obj = json.loads(json.dumps(obj))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = obj
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
            node = nxt
        node[parts[-1]] = parse_value(value)
    return obj


def load(path: Optional[str], overrides: List[str] = ()) -> RunConfig:
    obj: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return from_dict(apply_overrides(obj, list(overrides)))
