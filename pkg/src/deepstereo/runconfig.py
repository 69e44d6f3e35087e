"""Run configuration: one TOML document covering every component.

Sections map one-to-one onto the component config dataclasses. Unknown
sections or keys are rejected, numeric types are coerced to the field's
declared type, and every command writes the fully resolved document next
to its outputs so a run can be reproduced from its own echo.
"""

import dataclasses
import os

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .aggregation import AggregationConfig
from .backbone import BackboneConfig
from .baseline import BaselineConfig
from .errors import ConfigurationError, InputOutputError
from .synthdata import SceneSpec
from .trainer import TrainConfig

_SECTIONS = {
    "backbone": BackboneConfig,
    "aggregation": AggregationConfig,
    "train": TrainConfig,
    "scene": SceneSpec,
    "baseline": BaselineConfig,
}

# keys driven by other sections rather than set directly
_DERIVED_KEYS = {"aggregation": {"image_channels"}}


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = ""
    backbone: BackboneConfig = dataclasses.field(default_factory=BackboneConfig)
    aggregation: AggregationConfig = dataclasses.field(default_factory=AggregationConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    scene: SceneSpec = dataclasses.field(default_factory=SceneSpec)
    baseline: BaselineConfig = dataclasses.field(default_factory=BaselineConfig)

    def validate(self):
        self.aggregation.image_channels = self.backbone.image_channels
        self.backbone.validate()
        self.aggregation.validate()
        self.train.validate()
        self.scene.validate()
        self.baseline.validate()
        return self


def _coerce(section, name, expected_type, value):
    where = f"{section}.{name}" if section else name
    if expected_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if expected_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if expected_type is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected a boolean, got {value!r}")
        return value
    if expected_type is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _parse_layer_disparities(value):
    if value is None:
        return None
    if not isinstance(value, list):
        raise ConfigurationError("scene.layer_disparities: expected a list")
    parsed = []
    for entry in value:
        if isinstance(entry, (int, float)) and not isinstance(entry, bool):
            parsed.append(entry)
        elif isinstance(entry, list) and len(entry) == 2:
            parsed.append((float(entry[0]), float(entry[1])))
        else:
            raise ConfigurationError(
                f"scene.layer_disparities: entries are numbers or [lo, hi] pairs, got {entry!r}"
            )
    return parsed


def _build_section(section, cls, data):
    defaults = cls()
    allowed = {f.name for f in dataclasses.fields(cls)} - _DERIVED_KEYS.get(section, set())
    unknown = set(data) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if section == "scene" and name == "layer_disparities":
            kwargs[name] = _parse_layer_disparities(value)
        else:
            # the field's default value carries its expected runtime type
            kwargs[name] = _coerce(section, name, type(getattr(defaults, name)), value)
    return cls(**kwargs)


def from_dict(data):
    """Build a validated RunConfig from a nested plain dict."""
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a table")
    unknown = set(data) - set(_SECTIONS) - {"seed", "output_dir"}
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {sorted(unknown)}")
    run = RunConfig()
    if "seed" in data:
        run.seed = _coerce("", "seed", int, data["seed"])
    if "output_dir" in data:
        run.output_dir = _coerce("", "output_dir", str, data["output_dir"])
    for section, cls in _SECTIONS.items():
        if section in data:
            if not isinstance(data[section], dict):
                raise ConfigurationError(f"[{section}] must be a table")
            setattr(run, section, _build_section(section, cls, data[section]))
    return run.validate()


def load(path):
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise InputOutputError(f"cannot read config {path!r}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config {path!r} is not valid TOML: {exc}") from exc
    return from_dict(data)


def to_dict(run):
    """Plain nested dict (checkpoint echo, JSON-safe)."""
    out = {"seed": run.seed, "output_dir": run.output_dir}
    for section in _SECTIONS:
        values = dataclasses.asdict(getattr(run, section))
        for derived in _DERIVED_KEYS.get(section, ()):
            values.pop(derived, None)
        if section == "scene" and values.get("layer_disparities") is not None:
            values["layer_disparities"] = [
                list(d) if isinstance(d, (tuple, list)) else d
                for d in values["layer_disparities"]
            ]
        out[section] = values
    return out


def _toml_scalar(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        text = repr(float(value))
        return text if ("." in text or "e" in text or "inf" in text) else text + ".0"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise ConfigurationError(f"cannot serialize config value {value!r}")


def to_toml(run):
    lines = [f"seed = {_toml_scalar(run.seed)}"]
    if run.output_dir:
        lines.append(f"output_dir = {_toml_scalar(run.output_dir)}")
    data = to_dict(run)
    for section in _SECTIONS:
        lines.append("")
        lines.append(f"[{section}]")
        for key, value in data[section].items():
            if key in _DERIVED_KEYS.get(section, set()) or value is None:
                continue
            lines.append(f"{key} = {_toml_scalar(value)}")
    return "\n".join(lines) + "\n"


def save(path, run):
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_toml(run))


def write_echo(directory, run):
    """Drop the resolved config next to a command's outputs."""
    os.makedirs(directory, exist_ok=True)
    save(os.path.join(directory, "config.toml"), run)
