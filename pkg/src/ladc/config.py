"""Experiment configuration.

A config file is TOML with one section per concern.  Every key can also be
set on the command line as ``--set section.key=value`` (a few common ones
have dedicated flags); command-line values win over the file.

.. code-block:: toml

    seed = 7

    [synthetic]
    num_classes = 10
    imbalance_factor = 100

    [calibration]
    m = 2
    alpha = 0.15

    [stage2]
    mode = "lws_plus"
    lr_drops = [[10, 0.1], [20, 0.1]]
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from .calibration import CalibrationConfig
from .classifier import TrainConfig
from .errors import ConfigError
from .sampler import DRAW_UNITS

OUTPUT_ENV = "LADC_OUTPUT_DIR"


@dataclass
class DataConfig:
    train: str | None = None
    test: str | None = None
    format: str | None = None


@dataclass
class SyntheticConfig:
    num_classes: int = 10
    dim: int = 16
    imbalance_factor: float = 100.0
    max_count: int = 500
    test_per_class: int = 200
    radius: float = 0.7
    signal_std: float = 0.05
    nuisance_std: float = 0.5
    seed: int | None = None


@dataclass
class SamplingConfig:
    tau: float = 1.25
    draw_unit: str = "instance"
    batch_size: int = 128


@dataclass
class EvalConfig:
    many_threshold: int = 100
    few_threshold: int = 20


@dataclass
class OutputConfig:
    dir: str | None = None
    figures: bool = True
    scatter: bool = True


def _stage1():
    return TrainConfig(epochs=10, base_lr=0.1, lr_drops=[], mode="plain")


def _stage2():
    return TrainConfig(epochs=30, base_lr=0.01, lr_drops=[(10, 0.1), (20, 0.1)], mode="lws_plus")


@dataclass
class ExperimentConfig:
    seed: int = 0
    mass_ratio: float = 0.6
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    stage1: TrainConfig = field(default_factory=_stage1)
    stage2: TrainConfig = field(default_factory=_stage2)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def uses_synthetic(self) -> bool:
        return self.data.train is None

    @property
    def output_dir(self) -> Path:
        return Path(self.output.dir or os.environ.get(OUTPUT_ENV) or "ladc-out")

    def to_dict(self) -> dict:
        d = asdict(self)
        for stage in ("stage1", "stage2"):
            d[stage]["lr_drops"] = [list(p) for p in d[stage]["lr_drops"]]
        return d

    def validate(self) -> "ExperimentConfig":
        if not 0 < self.mass_ratio <= 1:
            raise ConfigError(f"mass_ratio must lie in (0, 1], got {self.mass_ratio}")
        if self.sampling.tau < 0:
            raise ConfigError(f"tau must be >= 0, got {self.sampling.tau}")
        if self.sampling.draw_unit not in DRAW_UNITS:
            raise ConfigError(f"draw_unit must be one of {DRAW_UNITS}")
        if self.sampling.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        s = self.synthetic
        if s.num_classes < 1 or s.dim < 1 or s.max_count < 1 or s.test_per_class < 0:
            raise ConfigError("synthetic sizes must be positive")
        if s.imbalance_factor < 1:
            raise ConfigError("imbalance_factor must be >= 1")
        if self.stage1.mode not in ("plain",):
            raise ConfigError("stage1 mode must be 'plain'")
        if self.stage2.mode == "plain":
            raise ConfigError("stage2 mode must be one of crt, lws, lws_plus")
        if self.eval.few_threshold > self.eval.many_threshold:
            raise ConfigError("few_threshold must not exceed many_threshold")
        # re-run the dataclass checks after in-place edits
        CalibrationConfig(**asdict(self.calibration))
        for stage in (self.stage1, self.stage2):
            TrainConfig(**asdict(stage))
        return self


_SECTIONS = {
    "data": DataConfig,
    "synthetic": SyntheticConfig,
    "calibration": CalibrationConfig,
    "sampling": SamplingConfig,
    "stage1": TrainConfig,
    "stage2": TrainConfig,
    "eval": EvalConfig,
    "output": OutputConfig,
}
_TOP = {"seed", "mass_ratio"}


def _coerce(cls, key, value):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ConfigError(f"unknown key {cls.__name__}.{key}")
    if not isinstance(value, str):
        return value
    t = str(types[key])
    try:
        if t.startswith("bool"):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if t.startswith("int"):
            return None if value.lower() == "none" else int(value)
        if t.startswith("float"):
            return float(value)
        if key == "lr_drops":
            return json.loads(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return None if value.lower() == "none" and "None" in t else value


def from_dict(raw: dict) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key in _TOP:
            setattr(cfg, key, _coerce(ExperimentConfig, key, value))
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            section = getattr(cfg, key)
            for k, v in value.items():
                setattr(section, k, _coerce(_SECTIONS[key], k, v))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        cfg.calibration = CalibrationConfig(**asdict(cfg.calibration))
        cfg.stage1 = TrainConfig(**asdict(cfg.stage1))
        cfg.stage2 = TrainConfig(**asdict(cfg.stage2))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path) -> dict:
    """Raw nested mapping from a TOML file, or from a JSON config/report echo."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            raw = json.loads(text)
            return raw.get("config", raw)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def apply_overrides(raw: dict, assignments) -> dict:
    """Apply ``section.key=value`` strings (or ``key=value`` for top-level keys)."""
    raw = copy.deepcopy(raw)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) == 1:
            raw[parts[0]] = value
        elif len(parts) == 2:
            raw.setdefault(parts[0], {})[parts[1]] = value
        else:
            raise ConfigError(f"override key {key!r} has too many parts")
    return raw
