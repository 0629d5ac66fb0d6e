"""Configuration management for workbench runs."""

import dataclasses
import hashlib
import json
import sys
import typing
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError
from .models import (
    EVALUATION_MODES,
    FIT_TARGETS,
    INTERACTION_FORMS,
    NOISE_PRESETS,
    NAMED_EXPERIMENTS,
    RC_MODES,
    REC_MODES,
    RunConfig,
    parse_junction_key,
)

APP_NAME = "bcs-workbench"


def get_data_dir() -> Path:
    """Return the platform-appropriate data directory."""
    if sys.platform == "darwin":
        return Path.home() / "Library" / "Application Support" / APP_NAME
    return Path.home() / ".local" / "share" / APP_NAME


def get_output_dir() -> Path:
    """Default root under which run directories are created."""
    return get_data_dir() / "runs"


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _coerce(value: Any, expected: Any, path: str) -> Any:
    origin = typing.get_origin(expected)
    args = typing.get_args(expected)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if dataclasses.is_dataclass(expected):
        return _build(expected, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return [_coerce(v, args[0], f"{path}.{i}") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {type(value).__name__}")
        return {str(k): _coerce(v, args[1], _join(path, str(k))) for k, v in value.items()}
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if expected is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {expected!r}")


def _build(cls: type, data: Any, path: str = "") -> Any:
    """Instantiate dataclass ``cls`` from JSON data, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(_join(path, key), "unknown key")
    values = {key: _coerce(value, hints[key], _join(path, key)) for key, value in data.items()}
    return cls(**values)


def _check_rate(value: float, path: str) -> None:
    if not 0 <= value <= 1:
        raise ConfigError(path, f"rate must be in [0, 1], got {value}")


def validate_config(config: RunConfig) -> RunConfig:
    """Semantic checks beyond types; raises ConfigError naming the field."""
    bcs = config.bcs
    if len(bcs.levels) < 2:
        raise ConfigError("bcs.levels", f"need at least 2 levels, got {len(bcs.levels)}")
    if bcs.g < 0:
        raise ConfigError("bcs.g", f"must be non-negative, got {bcs.g}")
    if bcs.dt <= 0:
        raise ConfigError("bcs.dt", f"must be positive, got {bcs.dt}")
    if bcs.total_time < bcs.dt:
        raise ConfigError("bcs.total_time", f"shorter than one step ({bcs.total_time} < {bcs.dt})")
    if abs(bcs.n_steps * bcs.dt - bcs.total_time) > 1e-9:
        raise ConfigError("bcs.total_time", f"{bcs.total_time} is not a whole number of dt={bcs.dt} steps")
    if bcs.form not in INTERACTION_FORMS:
        raise ConfigError("bcs.form", f"expected one of {INTERACTION_FORMS}, got {bcs.form!r}")

    n_qubits = len(bcs.levels)
    noise = config.noise
    if noise.preset is not None:
        if noise.preset not in NOISE_PRESETS:
            raise ConfigError("noise.preset", f"expected one of {sorted(NOISE_PRESETS)}, got {noise.preset!r}")
        if n_qubits != 3:
            raise ConfigError("noise.preset", "presets describe the 3-level chain")
    for name in ("lambda_cnot", "lambda_neigh"):
        for key, value in getattr(noise, name).items():
            path = f"noise.{name}.{key}"
            try:
                a, b = parse_junction_key(key)
            except ValueError as e:
                raise ConfigError(path, str(e)) from e
            if b != a + 1 or b >= n_qubits:
                raise ConfigError(path, f"({a}, {b}) is not a junction of the {n_qubits}-qubit chain")
            _check_rate(value, path)
    _check_rate(noise.lambda_glob, "noise.lambda_glob")
    _check_rate(noise.readout_flip, "noise.readout_flip")
    if not 0 <= noise.single_qubit_lambda <= 4 / 3:
        raise ConfigError("noise.single_qubit_lambda", f"must be in [0, 4/3], got {noise.single_qubit_lambda}")

    if config.rc.mode not in RC_MODES:
        raise ConfigError("rc.mode", f"expected one of {RC_MODES}, got {config.rc.mode!r}")
    if config.rc.count < 1:
        raise ConfigError("rc.count", f"must be at least 1, got {config.rc.count}")
    if config.nec.count is not None and config.nec.count < 1:
        raise ConfigError("nec.count", f"must be at least 1, got {config.nec.count}")
    if config.rec.mode not in REC_MODES:
        raise ConfigError("rec.mode", f"expected one of {REC_MODES}, got {config.rec.mode!r}")
    if config.rec.calibration_shots < 1:
        raise ConfigError("rec.calibration_shots", "must be positive")
    if config.rec.iterations < 1:
        raise ConfigError("rec.iterations", "must be positive")
    if config.fit.target not in FIT_TARGETS:
        raise ConfigError("fit.target", f"expected one of {FIT_TARGETS}, got {config.fit.target!r}")
    if config.fit.enabled and config.fit.experiment not in config.experiments:
        raise ConfigError("fit.experiment", f"{config.fit.experiment!r} is not one of the run's experiments")
    if config.fit.restarts < 1:
        raise ConfigError("fit.restarts", "must be at least 1")
    if config.shots < 1:
        raise ConfigError("shots", f"must be positive, got {config.shots}")
    if config.evaluation not in EVALUATION_MODES:
        raise ConfigError("evaluation", f"expected one of {EVALUATION_MODES}, got {config.evaluation!r}")
    if not config.experiments:
        raise ConfigError("experiments", "at least one experiment is required")
    for i, name in enumerate(config.experiments):
        basis = NAMED_EXPERIMENTS.get(name, name)
        if len(basis) != n_qubits or set(basis) - {"X", "Y", "Z"}:
            raise ConfigError(f"experiments.{i}", f"{name!r} is neither a named experiment nor an X/Y/Z basis string")
    return config


def config_from_dict(data: dict) -> RunConfig:
    return validate_config(_build(RunConfig, data))


def config_digest(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON form, independent of key order."""
    payload = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


class ConfigManager:
    """Loads, caches and saves a run configuration file."""

    def __init__(self, config_path: str | Path | None = None):
        self.config_path = Path(config_path) if config_path is not None else None
        self._config: Optional[RunConfig] = None

    def load(self) -> RunConfig:
        """Load configuration from file; a missing file gives the default experiment."""
        if self._config is not None:
            return self._config

        if self.config_path is None or not self.config_path.exists():
            self._config = RunConfig()
            return self._config

        try:
            with open(self.config_path, "r") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("", f"{self.config_path}: invalid JSON ({e.msg} at line {e.lineno})") from e
        self._config = config_from_dict(data)
        return self._config

    def save(self, config: RunConfig) -> None:
        if self.config_path is None:
            raise ConfigError("", "no config path to save to")
        self._config = validate_config(config)
        with open(self.config_path, "w") as f:
            json.dump(config.to_dict(), f, indent=2)

    def update(self, **kwargs: Any) -> RunConfig:
        """Update top-level config values, validate and save."""
        config = self.load()
        for key, value in kwargs.items():
            if not hasattr(config, key):
                raise ConfigError(key, "unknown key")
            setattr(config, key, value)
        self.save(config)
        return config
