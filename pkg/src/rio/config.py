"""Pipeline configuration and its YAML form.

Every section mirrors a module-level dataclass so defaults live in one place.
Unknown keys are rejected rather than silently ignored.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import MissingFile, ParseError
from .imu import ImuNoiseModel
from .radar_velocity import RobustSolveConfig
from .smoother import WindowConfig

RADAR_SELECTIONS = {
    "dual": ("horizontal", "vertical"),
    "horizontal": ("horizontal",),
    "vertical": ("vertical",),
}


@dataclass(frozen=True)
class InitConfig:
    window_sec: float = 1.0
    accel_var_threshold: float = 0.05  # (m/s^2)^2

    def __post_init__(self):
        if self.window_sec <= 0 or self.accel_var_threshold <= 0:
            raise ValueError("init window and threshold must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    radar: RobustSolveConfig = field(default_factory=RobustSolveConfig)
    imu: ImuNoiseModel = field(default_factory=ImuNoiseModel)
    init: InitConfig = field(default_factory=InitConfig)
    smoother: WindowConfig = field(default_factory=WindowConfig)
    radars: str = "dual"

    def __post_init__(self):
        if self.radars not in RADAR_SELECTIONS:
            raise ValueError(f"radars must be one of {sorted(RADAR_SELECTIONS)}, got {self.radars!r}")

    @property
    def sensor_ids(self) -> tuple:
        return RADAR_SELECTIONS[self.radars]


def _plain(value):
    if isinstance(value, np.ndarray):
        return [float(x) for x in value]
    if isinstance(value, (tuple, list)):
        return [_plain(x) for x in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def to_dict(config: PipelineConfig) -> dict:
    out = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = {g.name: _plain(getattr(value, g.name)) for g in dataclasses.fields(value)}
        else:
            out[f.name] = _plain(value)
    return out


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ParseError(f"{where}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ParseError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        elif isinstance(default, np.ndarray):
            value = np.asarray(value, dtype=float)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None


def from_dict(data: dict) -> PipelineConfig:
    data = dict(data or {})
    sections = {"radar": RobustSolveConfig, "imu": ImuNoiseModel,
                "init": InitConfig, "smoother": WindowConfig}
    unknown = sorted(set(data) - set(sections) - {"radars"})
    if unknown:
        raise ParseError(f"config: unknown sections {unknown}")
    kwargs = {name: _build(cls, data.get(name), name) for name, cls in sections.items()}
    try:
        return PipelineConfig(radars=data.get("radars", "dual"), **kwargs)
    except ValueError as exc:
        raise ParseError(f"config: {exc}") from None


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return from_dict(data)


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(config), sort_keys=True))
