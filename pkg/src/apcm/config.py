"""Run configuration: one JSON document, unknown keys rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .data import ManifoldSpec
from .diffcore import ContractError
from .idrp import ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str | None = None
    header: bool = False
    generator: ManifoldSpec = field(default_factory=ManifoldSpec)
    train_fraction: float = 0.5
    split_seed: int = 0


@dataclass
class BankConfig:
    max_mem: int = 64


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    out: str = "runs/default"

    def validate(self) -> None:
        try:
            self.model.validate()
            self.train.validate()
        except ContractError as e:
            raise ConfigError(str(e)) from None
        if not 0 < self.data.train_fraction < 1:
            raise ConfigError("data.train_fraction must lie in (0, 1)")
        if self.bank.max_mem < 1:
            raise ConfigError("bank.max_mem must be >= 1")
        g = self.data.generator
        if self.data.path is None and g.kind == "sinusoidal" and not 1 <= g.k < g.d:
            raise ConfigError("data.generator needs 1 <= k < d")

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where or 'top level'}: {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in raw.items():
        default = getattr(defaults, name)
        key = f"{where}.{name}" if where else name
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, key)
        else:
            kwargs[name] = _coerce(default, value, key)
    return cls(**kwargs)


def _coerce(default, value, key: str):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def config_from_dict(raw: dict) -> RunConfig:
    cfg = _build(RunConfig, raw, "")
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_dict(raw)


def apply_override(raw: dict, assignment: str) -> None:
    """Apply ``section.key=value`` (value parsed as JSON, else taken as a string)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    dotted, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} descends into a non-object")
    node[parts[-1]] = value
