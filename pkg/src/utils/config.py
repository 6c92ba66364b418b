"""Run configuration: built-in defaults, JSON/YAML files, environment, flags.

Precedence, lowest first: ``DEFAULTS``, ``config/config.json``, the file
named by ``--config`` or ``$CDK_CONFIG``, environment overrides
(``CDK_MODEL_TIMEOUT``, ``CDK_LOG_LEVEL``), explicit command-line flags.
"""

import copy
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv

from core.errors import UsageError
from models.base import TerminationMode

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parents[2]
CONFIG_DIR = PROJECT_ROOT / "config"
CONFIG_FILE = CONFIG_DIR / "config.json"
MODELS_FILE = CONFIG_DIR / "models.json"

DEFAULTS: Dict[str, Any] = {
    "K": 4,
    "M": 50,
    "temperature": 1.0,
    "mode": None,
    "draws": 1,
    "seed": 0,
    "bucket_policy": "pow2",
    "workers": 1,
    "model_timeout": 30.0,
    "seeded_concentration": 1.0,
    "log_level": "WARNING",
    "evaluate": {"ks": [1, 2, 3, 4], "draws": 10000},
    "bench": {
        "sizes": [1000, 10000],
        "ms": [50, 100, 500, 1000],
        "queries": 10000,
        "vocab_size": 50264,
    },
}


def load_config(config_path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    Load a configuration file (JSON or YAML).

    Args:
        config_path: Path to the config file, uses config/config.json if not specified

    Returns:
        Dictionary containing the configuration; empty when the default file is absent

    Raises:
        UsageError: If the file does not hold a mapping or cannot be parsed
    """
    explicit = config_path is not None
    config_path = Path(config_path) if explicit else CONFIG_FILE
    if not explicit and not config_path.exists():
        return {}
    with open(config_path, "r") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise UsageError(f"cannot parse config file {config_path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {config_path} must hold a mapping")
    logger.debug(f"Loaded config from {config_path}")
    return data


def update_dict(target: Dict[str, Any], source: Dict[str, Any]):
    """Merge ``source`` into ``target`` recursively."""
    for key, value in source.items():
        if key in target and isinstance(target[key], dict) and isinstance(value, dict):
            update_dict(target[key], value)
        else:
            target[key] = value


def env_overrides() -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if os.environ.get("CDK_MODEL_TIMEOUT"):
        try:
            overrides["model_timeout"] = float(os.environ["CDK_MODEL_TIMEOUT"])
        except ValueError:
            raise UsageError(f"CDK_MODEL_TIMEOUT must be a number, got {os.environ['CDK_MODEL_TIMEOUT']!r}") from None
    if os.environ.get("CDK_LOG_LEVEL"):
        overrides["log_level"] = os.environ["CDK_LOG_LEVEL"]
    return overrides


def resolve_config(config_path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Merge every configuration layer; ``None`` values in ``overrides`` are ignored."""
    load_dotenv()
    config = copy.deepcopy(DEFAULTS)
    update_dict(config, load_config())
    config_path = config_path or os.environ.get("CDK_CONFIG")
    if config_path:
        update_dict(config, load_config(config_path))
    update_dict(config, env_overrides())
    update_dict(config, {k: v for k, v in (overrides or {}).items() if v is not None})
    return config


def parse_k(value: Any) -> Optional[int]:
    """``"inf"`` or ``None`` means no round limit."""
    if value is None or str(value).lower() in ("inf", "infinite", "none"):
        return None
    try:
        k = int(value)
    except (TypeError, ValueError):
        raise UsageError(f"K must be a positive integer or 'inf', got {value!r}") from None
    if k < 1:
        raise UsageError(f"K must be a positive integer or 'inf', got {value!r}")
    return k


def resolve_path(path: Union[str, Path]) -> Path:
    """``path`` as given, or relative to the project root when that exists instead."""
    path = Path(path)
    if path.is_absolute() or path.exists():
        return path
    rooted = PROJECT_ROOT / path
    return rooted if rooted.exists() else path


@dataclass(frozen=True)
class RunConfig:
    K: Optional[int]
    M: int
    temperature: float
    mode: Optional[TerminationMode]
    draws: int
    seed: int
    bucket_policy: str
    workers: int
    model_timeout: float
    seeded_concentration: float
    log_level: str

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "RunConfig":
        try:
            run = cls(
                K=parse_k(config["K"]),
                M=int(config["M"]),
                temperature=float(config["temperature"]),
                mode=None if config["mode"] is None else TerminationMode.parse(config["mode"]),
                draws=int(config["draws"]),
                seed=int(config["seed"]),
                bucket_policy=str(config["bucket_policy"]),
                workers=int(config["workers"]),
                model_timeout=float(config["model_timeout"]),
                seeded_concentration=float(config["seeded_concentration"]),
                log_level=str(config["log_level"]).upper(),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise UsageError(f"invalid configuration value: {e}") from None
        run.validate()
        return run

    def validate(self):
        if self.M < 1:
            raise UsageError(f"M must be positive, got {self.M}")
        if not self.temperature > 0:
            raise UsageError(f"temperature must be positive, got {self.temperature}")
        if self.draws < 0:
            raise UsageError(f"draws must be non-negative, got {self.draws}")
        if self.seed < 0:
            raise UsageError(f"seed must be non-negative, got {self.seed}")
        if self.workers < 1:
            raise UsageError(f"workers must be positive, got {self.workers}")
        if not self.model_timeout > 0:
            raise UsageError(f"model_timeout must be positive, got {self.model_timeout}")
        if self.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise UsageError(f"unknown log level {self.log_level!r}")
