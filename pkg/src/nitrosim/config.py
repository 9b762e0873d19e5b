"""Experiment configuration: TOML in, frozen dataclasses out.

Each top-level table maps onto one dataclass. Unknown tables or keys are
errors, reported with the line they appear on. ``config_to_dict`` produces the
resolved form embedded in reports; ``config_from_dict`` reads it back.
"""
from __future__ import annotations

import dataclasses
import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .calibration import CalibrationStation, SensorResponseModel, SensorVariation
from .exchange import ArmErrorModel, FunnelConfig
from .geometry import FieldGenConfig, SensorGeometry
from .gripper import KinematicsConfig
from .mission import MissionConfig, SimConfig, SweepConfig
from .perception import DetectionModel, SelectionWeights


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = []
        if key:
            where.append(key)
        if line:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass(frozen=True)
class ExperimentSection:
    scenario: str = "paper2024"
    n_missions: int = 334
    base_seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if self.n_missions < 1:
            raise ValueError("n_missions must be >= 1")


@dataclass(frozen=True)
class ProtocolConfig:
    n_runs: int = 40
    n_sensors: int = 25
    inserts_before_run: int = 5
    repetitions: int = 100
    mapping: str = "round_robin"      # or "blocked"

    def __post_init__(self):
        if self.n_runs < 1 or self.n_sensors < 1 or self.repetitions < 1:
            raise ValueError("protocol counts must be >= 1")
        if self.inserts_before_run < 0:
            raise ValueError("inserts_before_run must be >= 0")
        if self.mapping not in ("round_robin", "blocked"):
            raise ValueError("mapping must be 'round_robin' or 'blocked'")


@dataclass(frozen=True)
class AnalysisConfig:
    funnel_sigmas_mm: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    funnel_draws: int = 100_000
    sweep_trials: int = 1000
    replacement_iterations: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    sim: SimConfig = field(default_factory=SimConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def with_overrides(self, *, seed: int | None = None, n_missions: int | None = None,
                       out_dir: str | None = None) -> ExperimentConfig:
        exp = self.experiment
        changes = {}
        if seed is not None:
            changes["base_seed"] = seed
        if n_missions is not None:
            changes["n_missions"] = n_missions
        if out_dir is not None:
            changes["out_dir"] = out_dir
        return dataclasses.replace(self, experiment=dataclasses.replace(exp, **changes))


# table name -> (owner, attribute, dataclass)
SECTIONS: dict[str, tuple[str, str, type]] = {
    "experiment": ("root", "experiment", ExperimentSection),
    "protocol": ("root", "protocol", ProtocolConfig),
    "analysis": ("root", "analysis", AnalysisConfig),
    "field": ("sim", "field_gen", FieldGenConfig),
    "sensor_geometry": ("sim", "sensor_geometry", SensorGeometry),
    "kinematics": ("sim", "kinematics", KinematicsConfig),
    "funnel": ("sim", "funnel", FunnelConfig),
    "arm_error": ("sim", "arm_error", ArmErrorModel),
    "sensor": ("sim", "sensor", SensorResponseModel),
    "sensor_variation": ("sim", "sensor_variation", SensorVariation),
    "station": ("sim", "station", CalibrationStation),
    "detection": ("sim", "detection", DetectionModel),
    "selection": ("sim", "selection", SelectionWeights),
    "sweep": ("sim", "sweep", SweepConfig),
    "mission": ("sim", "mission", MissionConfig),
    "exchange": ("sim", None, None),
}
_EXCHANGE_KEYS = {"load_retries"}


def _line_of(text: str | None, section: str, key: str | None = None) -> int | None:
    if not text:
        return None
    in_section = False
    for i, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", stripped)
        if m:
            in_section = m.group(1) == section
            if in_section and key is None:
                return i
            continue
        if in_section and key is not None and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return i
    return None


def _coerce(value: Any, default: Any, where: str, text: str | None, section: str, key: str) -> Any:
    line = _line_of(text, section, key)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", line, where)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", line, where)
        return value
    if isinstance(default, float) or (default is None and isinstance(value, (int, float))):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", line, where)
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"expected an array, got {value!r}", line, where)
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigError("expected an array of numbers", line, where)
        return tuple(float(v) for v in value)
    if isinstance(default, str) or isinstance(default, enum.Enum):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", line, where)
        return value
    return value


def _build(cls: type, values: dict, section: str, text: str | None):
    known = {f.name: f for f in dataclasses.fields(cls)}
    proto = cls()
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown key in [{section}]", _line_of(text, section, key), f"{section}.{key}")
        kwargs[key] = _coerce(value, getattr(proto, key), f"{section}.{key}", text, section, key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), _line_of(text, section), section) from exc


def config_from_dict(data: dict, text: str | None = None) -> ExperimentConfig:
    root: dict[str, Any] = {}
    sim: dict[str, Any] = {}
    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError("unknown section", _line_of(text, section), section)
        if not isinstance(values, dict):
            raise ConfigError("expected a table", _line_of(text, section), section)
        owner, attr, cls = SECTIONS[section]
        if section == "exchange":
            for key, value in values.items():
                if key not in _EXCHANGE_KEYS:
                    raise ConfigError("unknown key in [exchange]", _line_of(text, section, key), f"exchange.{key}")
                sim[key] = _coerce(value, 1, f"exchange.{key}", text, section, key)
            continue
        if section == "sensor_variation" and values.get("enabled", True) is False:
            sim[attr] = None
            continue
        values = {k: v for k, v in values.items() if not (section == "sensor_variation" and k == "enabled")}
        built = _build(cls, values, section, text)
        (root if owner == "root" else sim)[attr] = built
    try:
        root["sim"] = SimConfig(**sim)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(**root)


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    return loads_config(text)


def loads_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", int(m.group(1)) if m else None) from exc
    return config_from_dict(data, text)


def _plain(obj: Any) -> Any:
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def _section_dict(obj: Any) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out: dict[str, Any] = {}
    for section, (owner, attr, _) in SECTIONS.items():
        if section == "exchange":
            out[section] = {"load_retries": cfg.sim.load_retries}
            continue
        obj = getattr(cfg if owner == "root" else cfg.sim, attr)
        if obj is None:
            out[section] = {"enabled": False}
            continue
        d = _section_dict(obj)
        if section == "sensor":
            d.pop("failure", None)
        out[section] = d
    return out


def scenario_path(name: str) -> Path:
    return Path(__file__).parent / "scenarios" / f"{name}.toml"


def load_scenario(name: str) -> ExperimentConfig:
    path = scenario_path(name)
    if not path.exists():
        raise ConfigError(f"no shipped scenario named {name!r}")
    return load_config(path)
