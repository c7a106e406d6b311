"""Workbench configuration: defaults, YAML loading, canonical digest.

The on-disk format is nested key/value YAML mirroring the dataclass
tree; unknown keys are rejected so typos fail loudly.  The digest is a
SHA-256 over the canonical JSON form with the output directory removed,
so relocating a run does not change its identity.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields, is_dataclass
from pathlib import Path

import yaml

from .dynamics import ActuatorConfig, AeroConfig
from .episode import EnvConfig, RewardConfig
from .replay import ReplayConfig
from .signals import ReferenceModelConfig
from .trpo import TrpoConfig


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


@dataclass(frozen=True)
class CurriculumConfig:
    """Amplitude schedule and intermediate-test cadence."""

    start_cap: float = 2.0   # g, initial command amplitude bound
    max_cap: float = 10.0    # g
    step: float = 1.0        # g, raise per promotion
    test_interval: int = 25  # episodes between intermediate tests
    batch_episodes: int = 2  # episodes collected per update iteration

    def __post_init__(self) -> None:
        if not 0.0 < self.start_cap <= self.max_cap:
            raise ValueError("need 0 < start_cap <= max_cap")
        if self.step <= 0.0 or self.test_interval < 1 or self.batch_episodes < 1:
            raise ValueError("bad curriculum setting")


@dataclass(frozen=True)
class WorkbenchConfig:
    seed: int = 0
    episodes: int = 5000
    out_dir: str = "runs/nominal"
    aero: AeroConfig = AeroConfig()
    actuator: ActuatorConfig = ActuatorConfig()
    reference: ReferenceModelConfig = ReferenceModelConfig()
    reward: RewardConfig = RewardConfig()
    trpo: TrpoConfig = TrpoConfig()
    replay: ReplayConfig = ReplayConfig()
    curriculum: CurriculumConfig = CurriculumConfig()

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.episodes < 0:
            raise ConfigError("episode budget must be non-negative")

    def env(self) -> EnvConfig:
        return EnvConfig(aero=self.aero, actuator=self.actuator,
                         reference=self.reference, reward=self.reward)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {path or 'root'} must be a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section {path or 'root'}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default
        sub = f"{path}.{name}" if path else name
        if is_dataclass(default.__class__):
            kwargs[name] = _build(default.__class__, value, sub)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid value in section {path or 'root'}: {err}") from err


def config_from_dict(data: dict | None) -> WorkbenchConfig:
    return _build(WorkbenchConfig, data or {}, "")


def load_config(path: str | Path) -> WorkbenchConfig:
    """Parse a YAML config file; missing sections fall back to defaults."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    return config_from_dict(data)


def config_to_dict(cfg: WorkbenchConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: WorkbenchConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def config_digest(cfg: WorkbenchConfig) -> str:
    """Stable hash of every semantically meaningful field (out_dir excluded)."""
    payload = config_to_dict(cfg)
    payload.pop("out_dir", None)
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
