"""
Experiment Configuration Loading

Reads experiment configuration from YAML with environment variable overrides.

Features:
- Configuration from config.yaml (falls back to config.yaml.example)
- .env file support via python-dotenv
- TAULAB_* environment variable overrides
- Field-level validation errors (unknown keys are rejected)
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from core.config_models import ExperimentConfig
from core.errors import ConfigError

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).parent.parent


def _default_config_path() -> Path:
    config_path = PROJECT_ROOT / "config.yaml"
    if not config_path.exists():
        config_path = PROJECT_ROOT / "config.yaml.example"
    return config_path


def read_config_file(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Read a YAML config file into a plain dictionary."""
    config_path = Path(path) if path else _default_config_path()
    if not config_path.exists():
        logger.warning(f"Config file not found: {config_path}, using defaults")
        return {}
    try:
        with open(config_path) as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file {config_path} is not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {config_path} must contain a mapping at top level")
    return data


def apply_env_overrides(data: Dict[str, Any]) -> Dict[str, Any]:
    """
    Apply TAULAB_* environment overrides on top of file values.

    TAULAB_WORKERS     -> workers
    TAULAB_OUTPUT_DIR  -> output.directory
    """
    load_dotenv()
    merged = dict(data)
    if os.getenv("TAULAB_WORKERS"):
        try:
            merged["workers"] = int(os.environ["TAULAB_WORKERS"])
        except ValueError as e:
            raise ConfigError("Invalid environment override", {"TAULAB_WORKERS": str(e)}) from e
    if os.getenv("TAULAB_OUTPUT_DIR"):
        output = dict(merged.get("output") or {})
        output["directory"] = os.environ["TAULAB_OUTPUT_DIR"]
        merged["output"] = output
    return merged


def validate_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping, converting pydantic errors into a ConfigError."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        field_errors = {
            ".".join(str(part) for part in err["loc"]) or "<root>": err["msg"] for err in e.errors()
        }
        raise ConfigError("Invalid experiment configuration", field_errors) from e


def load_config(path: Optional[Union[str, Path]] = None, env_overrides: bool = True) -> ExperimentConfig:
    """
    Load and validate an experiment configuration.

    Args:
        path: YAML file; defaults to config.yaml or config.yaml.example at the project root
        env_overrides: Whether TAULAB_* environment variables are applied

    Returns:
        ExperimentConfig: validated configuration

    Raises:
        ConfigError: If the file is unreadable or any field is invalid
    """
    data = read_config_file(path)
    if env_overrides:
        data = apply_env_overrides(data)
    config = validate_config(data)
    logger.debug(f"Loaded config '{config.name}' with mode {config.curriculum.mode.value}")
    return config


def dump_config(config: ExperimentConfig) -> str:
    """Serialize a configuration back to YAML; load(dump(cfg)) == cfg."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True)


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(dump_config(config))
