"""Run configuration: one JSON file covering every component, with overrides.

Defaults reproduce the reference hyper-parameters (schedule alpha 10.0,
beta 0.8, omega 1.36; partition thresholds 0.5/0.5/0.1 with a 0.25 positive
quota share). The config path can also come from the ``ACTIVEPROP_CONFIG``
environment variable.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InputError
from .partition import PartitionConfig
from .schedule import ScheduleConfig
from .synth import SimulatorConfig
from .training import RatioExperimentConfig, TrainerConfig

CONFIG_ENV_VAR = "ACTIVEPROP_CONFIG"


@dataclass(frozen=True)
class EvalConfig:
    iou_thresh: float = 0.5
    ap_mode: str = "all_points"

    def __post_init__(self):
        if not (0.0 < self.iou_thresh <= 1.0):
            raise InputError(f"iou_thresh must lie in (0, 1], got {self.iou_thresh}")
        if self.ap_mode not in ("all_points", "voc07"):
            raise InputError(f"ap_mode must be 'all_points' or 'voc07', got {self.ap_mode!r}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    ratio: RatioExperimentConfig = field(default_factory=RatioExperimentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {
    "schedule": ScheduleConfig,
    "partition": PartitionConfig,
    "simulator": SimulatorConfig,
    "trainer": TrainerConfig,
    "ratio": RatioExperimentConfig,
    "eval": EvalConfig,
}

_TUPLE_FIELDS = {"ratios", "seeds"}


def _build_section(cls, data: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except InputError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - set(_SECTIONS) - {"seed", "schema"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"section {name!r} must be a JSON object")
        sections[name] = _build_section(cls, raw, name)
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return RunConfig(seed=seed, **sections)


def load_config(path: str | os.PathLike | None = None) -> RunConfig:
    """Load a config file, or defaults when neither a path nor env var is set."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    out: dict = {"schema": 1, "seed": cfg.seed}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        out[name] = {
            k: list(v) if isinstance(v, tuple) else v for k, v in section.items()
        }
    return out
