"""Scenario configuration: a YAML file with fixed sections and strict keys."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dynamics import HALF_PI


class ConfigError(ValueError):
    """Invalid scenario file; the message names the offending key path."""


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` and ``1.0e6`` as floats (YAML 1.2 style)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


@dataclass
class PlantSection:
    J: float = 1.0
    m: float = 1.0
    l: float = 0.3
    g_const: float = 9.81
    k1: float = 1.0
    k2: float = 1.0
    k3: float = 1.0
    B1: float = 0.5
    B2: float = 1.0
    B3: float = 0.5
    moment_gain: float = 2.0


@dataclass
class ReferenceSection:
    kind: str = "sinusoid"
    amplitudes: list = field(default_factory=lambda: [0.5])
    frequencies: list = field(default_factory=lambda: [1.0])
    phases: list = field(default_factory=lambda: [0.0])
    offset: float = 0.0


@dataclass
class ControllerSection:
    mu: float = 1.0
    eps: float = 0.1
    mode: str = "practical"
    n_cap: int = 8000
    quad_tol: float = 1e-10
    predict: bool = True
    R_tilde: float | None = None


@dataclass
class DelaySection:
    tau: float = 0.05


@dataclass
class ScheduleSection:
    kind: str = "uniform"
    r: float = 0.05
    seed: int = 0


@dataclass
class InitialInputSection:
    kind: str = "zero"
    value: float = 0.0


@dataclass
class SimSection:
    t0: float = 0.0
    horizon: float = 20.0
    h_plant: float = 1e-3
    q0: Any = 0.5
    qdot0: Any = 0.0
    initial_input: InitialInputSection = field(default_factory=InitialInputSection)
    decay_window_start: float | None = None
    converge_tol: float = 1e-3


@dataclass
class ValidationSection:
    n_samples: int = 10_000
    seed: int = 0


@dataclass
class SweepSection:
    seeds: list = field(default_factory=list)
    q0: list = field(default_factory=list)
    qdot0: list = field(default_factory=list)
    workers: int = 1


@dataclass
class OutputSection:
    dir: str = "out"


@dataclass
class ScenarioConfig:
    plant: PlantSection = field(default_factory=PlantSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    delay: DelaySection = field(default_factory=DelaySection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    sim: SimSection = field(default_factory=SimSection)
    validation: ValidationSection = field(default_factory=ValidationSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NUMERIC = (int, float)


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{_join(path, unknown[0])}: unknown key")
    kwargs = {}
    for name, val in data.items():
        f = fields[name]
        key = _join(path, name)
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), val, key)
        else:
            kwargs[name] = _coerce(default, val, key)
    return cls(**kwargs)


def _join(path, name):
    return f"{path}.{name}" if path else name


# keys validated after construction, and optional numbers
_FREE = {"sim.q0", "sim.qdot0"}
_OPTIONAL_FLOAT = {"controller.R_tilde", "sim.decay_window_start"}


def _coerce(default, val, key):
    if key in _FREE:
        return val
    if key in _OPTIONAL_FLOAT:
        if val is None:
            return None
        if isinstance(val, bool) or not isinstance(val, _NUMERIC):
            raise ConfigError(f"{key}: expected a number or null")
        return float(val)
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"{key}: expected true/false")
        return val
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{key}: expected an integer")
        return val
    if isinstance(default, float):
        if isinstance(val, bool) or not isinstance(val, _NUMERIC):
            raise ConfigError(f"{key}: expected a number")
        return float(val)
    if isinstance(default, str):
        if not isinstance(val, str):
            raise ConfigError(f"{key}: expected a string")
        return val
    if isinstance(default, list):
        if not isinstance(val, list):
            raise ConfigError(f"{key}: expected a list")
        return list(val)
    return val


def _positive(value, key):
    if not (value > 0):
        raise ConfigError(f"{key}: must be > 0, got {value!r}")


def validate_config(cfg: ScenarioConfig) -> ScenarioConfig:
    for name in ("J", "m", "l", "g_const", "k1", "k2", "k3", "B1", "B2", "B3", "moment_gain"):
        _positive(getattr(cfg.plant, name), f"plant.{name}")
    _positive(cfg.delay.tau, "delay.tau")
    _positive(cfg.schedule.r, "schedule.r")
    _positive(cfg.controller.mu, "controller.mu")
    _positive(cfg.controller.eps, "controller.eps")
    _positive(cfg.controller.quad_tol, "controller.quad_tol")
    _positive(cfg.controller.n_cap, "controller.n_cap")
    _positive(cfg.sim.horizon, "sim.horizon")
    _positive(cfg.sim.h_plant, "sim.h_plant")
    _positive(cfg.sim.converge_tol, "sim.converge_tol")
    _positive(cfg.validation.n_samples, "validation.n_samples")
    if cfg.controller.R_tilde is not None:
        _positive(cfg.controller.R_tilde, "controller.R_tilde")
    if cfg.controller.mode not in ("certified", "practical"):
        raise ConfigError("controller.mode: must be 'certified' or 'practical'")
    if cfg.schedule.kind not in ("uniform", "jittered"):
        raise ConfigError("schedule.kind: must be 'uniform' or 'jittered'")
    if cfg.reference.kind not in ("constant", "sinusoid", "sum"):
        raise ConfigError("reference.kind: must be 'constant', 'sinusoid' or 'sum'")
    if cfg.sim.initial_input.kind not in ("zero", "constant", "reference"):
        raise ConfigError("sim.initial_input.kind: must be 'zero', 'constant' or 'reference'")
    for key in ("q0", "qdot0"):
        val = getattr(cfg.sim, key)
        if val == "reference":
            continue
        if isinstance(val, bool) or not isinstance(val, _NUMERIC):
            raise ConfigError(f"sim.{key}: expected a number or 'reference'")
        setattr(cfg.sim, key, float(val))
    if cfg.sim.q0 != "reference" and abs(cfg.sim.q0) >= HALF_PI:
        raise ConfigError(f"sim.q0: |q0| = {abs(cfg.sim.q0)!r} violates the constraint |q| < pi/2")
    for key in ("seeds",):
        if any(isinstance(s, bool) or not isinstance(s, int) for s in getattr(cfg.sweep, key)):
            raise ConfigError(f"sweep.{key}: expected a list of integers")
    for key in ("q0", "qdot0"):
        vals = getattr(cfg.sweep, key)
        if any(isinstance(v, bool) or not isinstance(v, _NUMERIC) for v in vals):
            raise ConfigError(f"sweep.{key}: expected a list of numbers")
    if any(abs(v) >= HALF_PI for v in cfg.sweep.q0):
        raise ConfigError("sweep.q0: every entry must satisfy |q0| < pi/2")
    _positive(cfg.sweep.workers, "sweep.workers")
    return cfg


def config_from_dict(data: dict) -> ScenarioConfig:
    return validate_config(_build(ScenarioConfig, data, ""))


def load_config(path) -> ScenarioConfig:
    """Read, check and complete a scenario file.  Missing keys take the defaults above."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from exc
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: YAML parse error: {exc}") from exc
    return config_from_dict(data or {})
