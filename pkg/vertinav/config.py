"""Application configuration.

Process settings come from the environment (``VERTINAV_*``) through
pydantic-settings. Domain configuration is a JSON document merged over the
shipped ``defaults.json`` and validated by :class:`vertinav.models.VertinavConfig`.
"""

import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError
from pydantic_settings import BaseSettings

from vertinav.errors import ConfigError
from vertinav.models import SCHEMA_VERSION, VertinavConfig

logger = logging.getLogger(__name__)

DEFAULTS_PATH = Path(__file__).parent / "defaults.json"


class Settings(BaseSettings):
    """Process settings."""

    # Logging
    log_level: str = "INFO"

    # Domain configuration document
    config: Optional[str] = None

    # Monte Carlo worker processes
    workers: int = 1

    class Config:
        env_prefix = "VERTINAV_"
        env_file = ".env"
        case_sensitive = False


settings = Settings()


def load_defaults() -> Dict[str, Any]:
    """Return a fresh copy of the shipped defaults document."""
    return _parse_json(DEFAULTS_PATH.read_text(encoding="utf-8"), str(DEFAULTS_PATH))


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Merge ``override`` into a copy of ``base`` key by key.

    Nested mappings merge recursively; any other value (lists included)
    replaces the base value.
    """
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def config_from_mapping(document: Dict[str, Any], source: str = "<mapping>") -> VertinavConfig:
    """Merge a user document over the defaults and validate it.

    Args:
        document: Parsed user configuration
        source: Name used in diagnostics

    Returns:
        Validated configuration

    Raises:
        ConfigError: Unsupported schema version or validation failure
    """
    if not isinstance(document, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")

    version = document.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"{source}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )

    merged = deep_merge(load_defaults(), document)
    try:
        config = VertinavConfig.model_validate(merged)
    except ValidationError as e:
        diagnostics = [
            f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}"
            for err in e.errors()
        ]
        raise ConfigError(f"{source}: configuration failed validation", diagnostics) from e

    logger.debug(f"Loaded configuration from {source}")
    return config


def load_config(path: Optional[str] = None) -> VertinavConfig:
    """Load and validate a configuration document.

    Args:
        path: JSON file; falls back to ``VERTINAV_CONFIG``

    Returns:
        Validated configuration

    Raises:
        ConfigError: Missing file, JSON syntax error or schema violation
    """
    path = path or settings.config
    if not path:
        raise ConfigError("no configuration given (use --config or VERTINAV_CONFIG)")

    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"configuration file not found: {config_path}")

    document = _parse_json(config_path.read_text(encoding="utf-8"), str(config_path))
    return config_from_mapping(document, str(config_path))


def _parse_json(text: str, source: str) -> Dict[str, Any]:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{source}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}"
        ) from e
