"""Experiment configuration: JSON file plus CLI overrides into an ExperimentSpec.

Precedence is defaults < file < overrides. Keys are flat; each one belongs to
the power model, the system scenario or the experiment itself. Power and
system keys may also be given in dBm/dBW (`p_t_dbw`, `sigma2_dbm`, ...).
"""
import json
import logging
from pathlib import Path

from pydantic import ValidationError

from darb.exceptions import ConfigError
from darb.models.schemas import ExperimentSpec, PowerModel, SystemConfig

logger = logging.getLogger(__name__)

DB_SUFFIXES = ("_dbm", "_dbw")
POWER_FIELDS = frozenset(PowerModel.model_fields)
SYSTEM_FIELDS = frozenset(SystemConfig.model_fields)
EXPERIMENT_FIELDS = frozenset(ExperimentSpec.model_fields) - {"name", "system", "power"}


def _base_key(key: str) -> str:
    for suffix in DB_SUFFIXES:
        if key.endswith(suffix):
            return key[: -len(suffix)]
    return key


def load_config_file(path: str | Path) -> dict:
    """Read a JSON object of overrides; nested "power"/"system" sections are flattened."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")

    flat = {}
    for key, value in data.items():
        if key in ("power", "system") and isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    logger.debug("Loaded %d config key(s) from %s", len(flat), path)
    return flat


def merge_values(lower: dict, higher: dict) -> dict:
    """`higher` wins; a key replaces its unit variants too (p_t_dbw replaces p_t)."""
    merged = dict(lower)
    for key, value in higher.items():
        if value is None:
            continue
        base = _base_key(key)
        for existing in list(merged):
            if _base_key(existing) == base:
                del merged[existing]
        merged[key] = value
    return merged


def split_values(values: dict) -> tuple:
    """(power, system, experiment) dictionaries; unknown keys are an error."""
    power, system, experiment = {}, {}, {}
    unknown = []
    for key, value in values.items():
        base = _base_key(key)
        if base in POWER_FIELDS:
            power[key] = value
        elif base in SYSTEM_FIELDS:
            system[key] = value
        elif key in EXPERIMENT_FIELDS:
            experiment[key] = value
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(sorted(unknown))}")
    return power, system, experiment


def build_spec(name: str, file_values: dict | None = None, overrides: dict | None = None) -> ExperimentSpec:
    values = merge_values(file_values or {}, overrides or {})
    power, system, experiment = split_values(values)
    try:
        return ExperimentSpec(
            name=name,
            power=PowerModel(**power),
            system=SystemConfig(**system),
            **experiment,
        )
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
