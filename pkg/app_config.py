"""
Runtime configuration for the indefinite-data causal toolkit
"""
import json
import logging
import os
from typing import Any, Dict, Optional, Type, TypeVar

import toml
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError
from rich.logging import RichHandler

from src.errors import ConfigError

load_dotenv()

ModelT = TypeVar("ModelT", bound=BaseModel)


class AppConfig:
    # Environment
    OUTPUT_DIR = os.getenv("IDC_OUTPUT_DIR", "runs")
    LOG_LEVEL = os.getenv("IDC_LOG_LEVEL", "INFO")

    # Numerics
    RANK_TOL = 1e-6
    GATE_THRESHOLD = 0.5

    # Direction test
    ALPHA = 0.05
    N_PERMUTATIONS = 500

    # Evaluation
    EVAL_FOLDS = 10
    HELD_OUT_PER_FOLD = 2
    VALID_FRACTION = 0.1

    # Confounding sweep: the other three axes stay at these values
    SWEEP_FIXED = {"n_observed": 20, "n_confounders": 5, "pervasiveness": 0.4, "samples_per_skeleton": 10}

    @classmethod
    def worker_count(cls) -> int:
        """IDC_THREADS, read at call time so --threads can override it"""
        raw = os.getenv("IDC_THREADS", "1")
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"IDC_THREADS must be an integer, got {raw!r}")
        if value == 0 or value < -1:
            raise ConfigError(f"IDC_THREADS must be >= 1 or -1 (all cores), got {value}")
        return value

    @classmethod
    def validate_config(cls):
        """Validate all configuration parameters"""
        if cls.RANK_TOL <= 0:
            raise ConfigError("RANK_TOL must be positive")
        if not 0.0 <= cls.GATE_THRESHOLD <= 1.0:
            raise ConfigError("GATE_THRESHOLD must lie in [0, 1]")
        if not 0.0 < cls.ALPHA < 1.0:
            raise ConfigError("ALPHA must lie in (0, 1)")
        cls.worker_count()

    @staticmethod
    def load_config_file(path: Optional[str]) -> Dict[str, Any]:
        """Read a JSON or TOML config file; None gives an empty config"""
        if path is None:
            return {}
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                if path.endswith(".toml"):
                    data = toml.load(f)
                else:
                    data = json.load(f)
        except (json.JSONDecodeError, toml.TomlDecodeError) as e:
            raise ConfigError(f"Cannot parse config file {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold an object at the top level")
        return data

    @staticmethod
    def resolve(model_cls: Type[ModelT], file_config: Dict[str, Any], section: Optional[str] = None,
                **overrides) -> ModelT:
        """Defaults < config file section < explicit CLI flags (None means not given)"""
        values = dict(file_config.get(section, {}) if section else file_config)
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return model_cls(**values)
        except ValidationError as e:
            raise ConfigError(f"Invalid {section or model_cls.__name__} config: {e}")

    @classmethod
    def setup_logging(cls, debug: bool = False):
        level = logging.DEBUG if debug else getattr(logging, cls.LOG_LEVEL.upper(), logging.INFO)
        logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]",
                            handlers=[RichHandler(rich_tracebacks=debug, show_path=debug)], force=True)


# Global config instance
config = AppConfig()
