"""Experiment configuration: nested dataclasses loaded from YAML with strict validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .agents import SCHEMES, AgentsConfig, DtUtilityConfig, PpoConfig
from .energy import EnergyPolicy
from .sim import FusionConfig
from .threat import ThreatConfig
from .world import FarmConfig, VitalParams


class ConfigError(ValueError):
    """Raised for unknown keys, type mismatches and constraint violations."""


@dataclass(frozen=True)
class MetricsConfig:
    return_gamma: float = 1.0  # discount for the reported accumulated reward
    runtime_episodes: int = 50
    aggregate_episodes: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.return_gamma <= 1.0:
            raise ValueError(f"return_gamma must be in (0, 1], got {self.return_gamma}")
        if self.runtime_episodes < 1 or self.aggregate_episodes < 1:
            raise ValueError("runtime_episodes and aggregate_episodes must be positive")


@dataclass(frozen=True)
class RunConfig:
    scheme: str = "DT-PPO"
    episodes: int = 50
    runs: int = 10
    seed: int = 0
    schemes: tuple[str, ...] = SCHEMES
    sweep_p_a: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    sweep_p_ae: tuple[float, ...] = (0.0,)
    pretrain_seed_offset: int = 1_000_003
    record_wall_time: bool = False

    def __post_init__(self) -> None:
        for s in (self.scheme, *self.schemes):
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
        if self.episodes < 1 or self.runs < 1:
            raise ValueError("episodes and runs must be positive")
        for p in (*self.sweep_p_a, *self.sweep_p_ae):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"sweep probabilities must be in [0, 1], got {p}")


@dataclass(frozen=True)
class ExperimentConfig:
    farm: FarmConfig = field(default_factory=FarmConfig)
    energy: EnergyPolicy = field(default_factory=EnergyPolicy)
    threat: ThreatConfig = field(default_factory=ThreatConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    experiment: RunConfig = field(default_factory=RunConfig)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with some fields of some sections replaced: ``replace(threat={"p_a": 0.2})``."""
        changes = {}
        for name, values in sections.items():
            changes[name] = dataclasses.replace(getattr(self, name), **values)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return to_plain(self)

    def hash(self) -> str:
        return config_hash(self)


_NESTED = (FarmConfig, EnergyPolicy, ThreatConfig, FusionConfig, AgentsConfig, MetricsConfig, RunConfig,
           ExperimentConfig, VitalParams, DtUtilityConfig, PpoConfig)


def to_plain(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(to_plain(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(value, hint, where: str):
    """Convert a YAML value to ``hint`` or raise a ConfigError naming ``where``."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if hint in _NESTED:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
        return _build(hint, value, where)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(value, arg, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if errors else f"{where}: bad value {value!r}")
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: dict, where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{where}.{key}: unknown key" if where else f"{key}: unknown key")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}" if where else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a YAML file (empty or missing path gives the defaults)."""
    if path is None:
        return ExperimentConfig()
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)
