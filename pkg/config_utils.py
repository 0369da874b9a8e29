#!/usr/bin/env python3
"""
Configuration Utilities

Validation helpers for agent and experiment settings, plus the flat
`key = value` config file format. Values are resolved with the precedence

    field defaults < config file < ADAMVE_* environment < --set overrides

and handed to a pydantic model, which coerces and validates them.
"""

import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Type, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "ADAMVE_"


class ConfigValidator:
    """Validation utilities for configuration values"""

    CONFIG_KEY_PATTERN = re.compile(r'^[a-z][a-z0-9_]*$')

    VALID_ALGORITHMS = {"dqn", "mve", "mve_uniform", "adamve"}
    VALID_MODELS = {"oracle", "threeroom", "nowall", "learned"}
    VALID_ENVIRONMENTS = {"fourroom", "fourroom2"}
    VALID_REFERENCE_POLICIES = {"conservative", "greedy", "replay"}
    VALID_APPROXIMATORS = {"tabular", "mlp"}
    VALID_MODEL_SOURCES = {"fixed", "online"}
    VALID_OPTIMIZERS = {"adam", "sgd"}

    MAX_ROLLOUT_HORIZON = 10

    @staticmethod
    def validate_choice(value: str, allowed: Iterable[str], name: str) -> Dict[str, Any]:
        """
        Validate that a value is one of a fixed set of names.

        Returns:
            Dict with 'valid' boolean and 'errors' list
        """
        errors = []
        allowed = sorted(allowed)
        if value not in allowed:
            errors.append(f"{name} must be one of {', '.join(allowed)}, got '{value}'")
        return {"valid": len(errors) == 0, "errors": errors}

    @staticmethod
    def validate_positive(value: float, name: str) -> Dict[str, Any]:
        errors = []
        if value is None or value <= 0:
            errors.append(f"{name} must be positive, got {value}")
        return {"valid": len(errors) == 0, "errors": errors}

    @staticmethod
    def validate_unit_interval(value: float, name: str) -> Dict[str, Any]:
        errors = []
        if not 0.0 <= value <= 1.0:
            errors.append(f"{name} must lie in [0, 1], got {value}")
        return {"valid": len(errors) == 0, "errors": errors}

    @staticmethod
    def validate_horizon(value: int, name: str, minimum: int = 0) -> Dict[str, Any]:
        errors = []
        if not minimum <= value <= ConfigValidator.MAX_ROLLOUT_HORIZON:
            errors.append(f"{name} must lie in [{minimum}, {ConfigValidator.MAX_ROLLOUT_HORIZON}], got {value}")
        return {"valid": len(errors) == 0, "errors": errors}

    @staticmethod
    def validate_hidden_layers(layers: Sequence[int]) -> Dict[str, Any]:
        errors = []
        for width in layers:
            if width < 1:
                errors.append(f"Hidden layer widths must be positive, got {width}")
        return {"valid": len(errors) == 0, "errors": errors}

    @staticmethod
    def validate_seeds(seeds: Sequence[int]) -> Dict[str, Any]:
        errors = []
        if not seeds:
            errors.append("At least one seed is required")
        if len(set(seeds)) != len(seeds):
            errors.append(f"Seeds must be distinct, got {list(seeds)}")
        for seed in seeds:
            if seed < 0:
                errors.append(f"Seeds must be nonnegative, got {seed}")
        return {"valid": len(errors) == 0, "errors": errors}

    @staticmethod
    def validate_file_path(path: Optional[Union[str, Path]], name: str) -> Dict[str, Any]:
        """
        Validate that a referenced file exists.

        Returns:
            Dict with 'valid' boolean, 'errors' list and 'normalized_path'
        """
        errors = []
        if path is None or str(path) == "":
            return {"valid": True, "errors": errors, "normalized_path": None}
        normalized = Path(path).expanduser()
        if not normalized.is_file():
            errors.append(f"{name} does not exist: {normalized}")
        return {"valid": len(errors) == 0, "errors": errors, "normalized_path": str(normalized)}

    @staticmethod
    def validate_config_key(key: str) -> Dict[str, Any]:
        errors = []
        if not ConfigValidator.CONFIG_KEY_PATTERN.match(key):
            errors.append(f"Config key '{key}' must be lowercase letters, digits and underscores")
        return {"valid": len(errors) == 0, "errors": errors}


def raise_if_invalid(result: Dict[str, Any]) -> None:
    """pydantic validator helper: turn a validation result into ValueError"""
    if not result["valid"]:
        raise ValueError('; '.join(result["errors"]))


def split_list(value: Any) -> Any:
    """Accept comma-separated strings wherever a list is expected"""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


# Config files

def parse_config_text(text: str, source: str = "<string>") -> Dict[str, str]:
    """
    Parse flat `key = value` lines. '#' starts a comment; blank lines are
    ignored. Duplicate or malformed lines are collected and reported together.
    """
    values: Dict[str, str] = {}
    errors = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            errors.append(f"{source}:{number}: expected 'key = value', got '{raw.strip()}'")
            continue
        key_result = ConfigValidator.validate_config_key(key)
        if not key_result["valid"]:
            errors.extend(f"{source}:{number}: {e}" for e in key_result["errors"])
            continue
        if key in values:
            errors.append(f"{source}:{number}: duplicate key '{key}'")
            continue
        values[key] = value.strip()
    if errors:
        raise ConfigError(f"Malformed config {source}", errors)
    return values


def parse_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    values = parse_config_text(path.read_text(), source=str(path))
    logger.debug(f"Read {len(values)} keys from {path}")
    return values


def parse_overrides(items: Sequence[str]) -> Dict[str, str]:
    """Parse repeated `--set key=value` options"""
    values: Dict[str, str] = {}
    errors = []
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            errors.append(f"Override '{item}' is not of the form key=value")
            continue
        values[key.strip()] = value.strip()
    if errors:
        raise ConfigError("Invalid command-line overrides", errors)
    return values


def load_environment(env_file: Optional[Union[str, Path]] = None) -> None:
    """Load an optional .env file into os.environ without overriding it"""
    load_dotenv(dotenv_path=env_file, override=False)


def environment_values(keys: Iterable[str], environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """Values of ADAMVE_<KEY> variables for the given config keys"""
    environ = os.environ if environ is None else environ
    values = {}
    for key in keys:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            values[key] = environ[name]
    return values


def resolve_values(known_keys: Iterable[str], path: Optional[Union[str, Path]] = None,
                   overrides: Optional[Mapping[str, str]] = None,
                   environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """
    Merge file, environment and override layers.

    Raises:
        ConfigError: Listing every unknown key
    """
    known = set(known_keys)
    values: Dict[str, str] = {}
    layers = []
    if path is not None:
        layers.append(("config file", parse_config_file(path)))
    layers.append(("environment", environment_values(known, environ)))
    layers.append(("overrides", dict(overrides or {})))

    unknown = []
    for layer_name, layer in layers:
        for key, value in layer.items():
            if key not in known:
                unknown.append(f"Unknown key '{key}' in {layer_name}")
            else:
                values[key] = value
    if unknown:
        raise ConfigError("Configuration has unknown keys", unknown)
    return values


def build_model(model_cls: Type[BaseModel], values: Mapping[str, Any]) -> BaseModel:
    """Instantiate a pydantic model, converting validation failures to ConfigError"""
    try:
        return model_cls(**values)
    except ValidationError as e:
        errors = [f"{'.'.join(str(p) for p in err['loc']) or model_cls.__name__}: {err['msg']}" for err in e.errors()]
        raise ConfigError(f"Invalid {model_cls.__name__}", errors)


def format_config(values: Mapping[str, Any]) -> str:
    """Render values in the config file format, keys sorted"""
    lines = []
    for key in sorted(values):
        value = values[key]
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif value is None:
            continue
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def partition_values(values: Mapping[str, Any], *model_classes: Type[BaseModel]) -> Tuple[Dict[str, Any], ...]:
    """Split a flat mapping into one dict per model class by field name"""
    parts = []
    for model_cls in model_classes:
        fields = set(model_cls.model_fields)
        parts.append({k: v for k, v in values.items() if k in fields})
    return tuple(parts)
