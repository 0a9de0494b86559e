"""Run configuration: one YAML file, validated, hashed into a run manifest.

Every section maps onto a plain dataclass. Unknown keys anywhere are an error
so typos cannot silently fall back to defaults. The fixed rates of the method
(500 Hz control, stride 20 to 25 Hz, input noise variance 0.01, batch 16) are
the shipped defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .control import ControllerGains
from .dataset import LOWPASS_HZ, NOISE_VARIANCE, STRIDE
from .dynamics import PlantParams
from .model import PRESETS, TrainConfig
from .tasks import PEN_OFFSETS_CM, SIZE_RANGE, STIFFNESS_RANGE, TRAIN_PEN_OFFSETS_CM


class ConfigError(ValueError):
    pass


@dataclass
class PlantSection:
    inertia: list = field(default_factory=lambda: PlantParams().inertia.tolist())
    viscosity: list = field(default_factory=lambda: PlantParams().viscosity.tolist())
    gravity: list = field(default_factory=lambda: PlantParams().gravity.tolist())
    dt: float = 0.002  # 500 Hz control

    def build(self) -> PlantParams:
        return PlantParams(len(self.inertia), np.array(self.inertia, dtype=float),
                           np.array(self.viscosity, dtype=float),
                           np.array(self.gravity, dtype=float), self.dt)


@dataclass
class GainsSection:
    kp: float | list = 100.0
    kd: float | list = 20.0
    kf: float | list = 1.0
    g_dob: float | list = 40.0
    g_d: float | list = 40.0
    torque_limit: float | list = 4.0

    def build(self, dof: int) -> ControllerGains:
        return ControllerGains(dof, self.kp, self.kd, self.kf, self.g_dob, self.g_d,
                               self.torque_limit)


@dataclass
class BilateralSection:
    scaled: bool = True  # pick-and-place demos; writing is always unscaled
    force_scale: float = 0.1  # gripper scale when scaled


@dataclass
class TaskSection:
    kind: str = "pick_place"
    n_train: int = 12
    n_test: int = 20
    episodes_per_object: int = 3
    stiffness_range: list = field(default_factory=lambda: list(STIFFNESS_RANGE))
    size_range: list = field(default_factory=lambda: list(SIZE_RANGE))
    train_fraction: float = 0.4
    grip_force: float = 0.2
    pen_pressure: float = 0.5
    train_pen_offsets: list = field(default_factory=lambda: list(TRAIN_PEN_OFFSETS_CM))
    eval_pen_offsets: list = field(default_factory=lambda: list(PEN_OFFSETS_CM))
    episodes_per_setting: int = 6


@dataclass
class DatasetSection:
    stride: int = STRIDE
    lowpass_hz: float | None = LOWPASS_HZ


@dataclass
class TrainSection:
    preset: str = "desk"
    epochs: int | None = None  # None: the preset's epoch count
    batch_size: int = 16
    lr: float = 1e-3
    truncation: int = 100
    noise_variance: float = NOISE_VARIANCE
    checkpoint_every: int = 50

    def build(self, seed: int) -> TrainConfig:
        epochs = PRESETS[self.preset]["epochs"] if self.epochs is None else self.epochs
        return TrainConfig(self.batch_size, epochs, self.lr, seed=seed,
                           truncation=self.truncation, noise_variance=self.noise_variance,
                           checkpoint_every=self.checkpoint_every)


@dataclass
class EvalSection:
    n_trials: int = 5
    variants: list = field(default_factory=lambda: ["f2fl", "without-force"])
    plots: bool = True
    trace_trials: int = 1  # per task, how many trials get trace CSVs


@dataclass
class PathsSection:
    root: str = "run"


@dataclass
class RunConfig:
    seed: int = 0
    plant: PlantSection = field(default_factory=PlantSection)
    gains: GainsSection = field(default_factory=GainsSection)
    bilateral: BilateralSection = field(default_factory=BilateralSection)
    task: TaskSection = field(default_factory=TaskSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def validate(self) -> "RunConfig":
        if self.train.preset not in PRESETS:
            raise ConfigError(f"train.preset must be one of {sorted(PRESETS)}")
        try:
            plant = self.plant.build()
            self.gains.build(plant.dof).check_dt(plant.dt)
            self.train.build(self.seed)
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from None
        if self.task.kind not in ("pick_place", "write"):
            raise ConfigError(f"task.kind must be pick_place or write, got {self.task.kind!r}")
        for v in self.eval.variants:
            if v not in ("f2fl", "without-force"):
                raise ConfigError(f"unknown eval variant {v!r}")
        if self.dataset.stride < 1:
            raise ConfigError("dataset.stride must be >= 1")
        if self.bilateral.force_scale <= 0:
            raise ConfigError("bilateral.force_scale must be positive")
        for name in ("n_train", "n_test", "episodes_per_object", "episodes_per_setting"):
            if getattr(self.task, name) < 0:
                raise ConfigError(f"task.{name} must be >= 0")
        if self.eval.n_trials < 1:
            raise ConfigError("eval.n_trials must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def root(self) -> Path:
        return Path(self.paths.root)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = fields[name].default_factory if fields[name].default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub()):
            kwargs[name] = _build(type(sub()), value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {}, "").validate()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load a YAML config (or defaults when ``path`` is None) and apply
    ``{"section.key": value}`` overrides."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
    for key, value in (overrides or {}).items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


def run_manifest(cfg: RunConfig, command: str) -> dict:
    """Everything needed to reproduce an artifact from the same inputs."""
    return {
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"bilateral_il": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "yaml": yaml.__version__},
        "argv": sys.argv[1:],
    }
