"""Layered run configuration: built-in defaults <- JSON file <- command-line flags."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .optim.train import TrainConfig

CONFIG_FILE = "config.json"


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    width: int = 128
    height: int = 64
    n_cameras: int = 12
    radius: float = 5.0
    points_per_view: int = 400
    beta_d: tuple[float, float, float] = (0.08, 0.05, 0.03)
    beta_b: tuple[float, float, float] = (0.05, 0.07, 0.10)
    b_inf: tuple[float, float, float] = (0.08, 0.18, 0.25)


@dataclass
class GradCheckConfig:
    n_gaussians: int = 10
    width: int = 16
    height: int = 8
    n_views: int = 2
    eps: float = 1e-4
    rel_tol: float = 1e-3
    abs_tol: float = 1e-7
    # scalars sampled per group; 0 checks every scalar
    max_per_group: int = 300


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gradcheck: GradCheckConfig = field(default_factory=GradCheckConfig)

    def resolved(self) -> "RunConfig":
        """Copy with the global seed pushed into every seeded sub-config."""
        cfg = from_dict(to_dict(self))
        t = cfg.train
        t.seed = cfg.seed
        t.appearance.seed = cfg.seed
        t.medium.seed = cfg.seed
        t.init.seed = cfg.seed
        return cfg


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def _merge(obj, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{where}: unknown key {key!r}")
        current = getattr(obj, key)
        path = f"{where}.{key}" if where else key
        if dataclasses.is_dataclass(current):
            _merge(current, value, path)
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(current):
                raise ConfigError(f"{path}: expected a list of {len(current)} numbers")
            setattr(obj, key, tuple(float(v) for v in value))
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}: expected true/false")
            setattr(obj, key, value)
        elif isinstance(current, int) and not isinstance(value, bool) and isinstance(value, int):
            setattr(obj, key, value)
        elif isinstance(current, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
            setattr(obj, key, float(value))
        elif current is None or isinstance(value, type(current)):
            setattr(obj, key, value)
        else:
            raise ConfigError(f"{path}: expected {type(current).__name__}, got {type(value).__name__}")
    return obj


def from_dict(data: dict) -> RunConfig:
    return _merge(RunConfig(), data, "")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return from_dict(data)


def dump_config(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir) / CONFIG_FILE
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
    return out
