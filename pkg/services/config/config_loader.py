"""
Key-value config files.

    # comment
    model.widths = 8, 16, 32
    train.steps = 200
    loss.style = 0

Comma-separated values become lists, `true` / `false` booleans and `none` null.
Precedence is defaults < file < command-line overrides.
"""
import logging
import typing
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, ValidationError

from components.errors import ConfigError
from models.completion_config import ExperimentConfig

logger = logging.getLogger(__name__)

SECTIONS = tuple(ExperimentConfig.model_fields)


def parse_scalar(text: str) -> Any:
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(text: str) -> Any:
    if "," in text:
        return [parse_scalar(part) for part in text.split(",") if part.strip()]
    return parse_scalar(text)


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """`section.key = value` lines -> {'section.key': 'value'}; later lines win."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    entries: Dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key] = value
    return entries


def _is_sequence_field(model: BaseModel, key: str) -> bool:
    origin = typing.get_origin(type(model).model_fields[key].annotation)
    return origin in (list, tuple)


def apply_overrides(base: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """
    Return a validated copy of `base` with `section.key` overrides applied.

    String values are parsed; other values are used as given.

    Raises:
        ConfigError: unknown section or key, or a value the field rejects.
    """
    data = base.model_dump()
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError(f"unknown config section in {dotted!r}; sections are {list(SECTIONS)}")
        section_model = getattr(base, section)
        if key not in type(section_model).model_fields:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(value, str):
            value = parse_value(value)
        if _is_sequence_field(section_model, key) and not isinstance(value, (list, tuple)):
            value = [] if value is None else [value]
        data[section][key] = value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_experiment(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Dict[str, Any]] = None,
                    base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    experiment = base or ExperimentConfig()
    if path is not None:
        experiment = apply_overrides(experiment, read_config_file(path))
        logger.debug("config file %s applied", path)
    if overrides:
        experiment = apply_overrides(experiment, overrides)
    return experiment
