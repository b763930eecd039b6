"""Configuration from environment variables."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Self

log = logging.getLogger(__name__)

DEFAULT_GRID_CAP = 10**8


def _int_env(name: str, default: int) -> int:
    """Parse an integer environment variable with validation."""
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        msg = f"Environment variable {name} must be an integer, got {raw!r}"
        raise ValueError(msg) from None


def _float_env(name: str, default: float) -> float:
    """Parse a float environment variable with validation."""
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        msg = f"Environment variable {name} must be a number, got {raw!r}"
        raise ValueError(msg) from None


class LogFormat(Enum):
    """How CLI log records are rendered on stderr."""

    TEXT = "text"
    JSON = "json"


@dataclass(frozen=True)
class DeDefaults:
    """Default differential evolution settings for ``trc optimize --mode de``."""

    population_size: int = 20
    generations: int = 50
    differential_weight: float = 0.8
    crossover_rate: float = 0.9

    @classmethod
    def from_env(cls) -> Self:
        return cls(
            population_size=_int_env("TRC_DE_POP", 20),
            generations=_int_env("TRC_DE_GENS", 50),
            differential_weight=_float_env("TRC_DE_F", 0.8),
            crossover_rate=_float_env("TRC_DE_CR", 0.9),
        )


@dataclass(frozen=True)
class ProtocolConfig:
    """Default hold-out protocol for ``trc evaluate``."""

    repeats: int = 10
    test_fraction: float = 0.25
    k: int = 5

    @classmethod
    def from_env(cls) -> Self:
        return cls(
            repeats=_int_env("TRC_EVAL_REPEATS", 10),
            test_fraction=_float_env("TRC_EVAL_TEST_FRAC", 0.25),
            k=_int_env("TRC_EVAL_K", 5),
        )


@dataclass(frozen=True)
class Config:
    """Application configuration."""

    # Optimizer
    workers: int = 1
    grid_cap: int = DEFAULT_GRID_CAP

    # Logging
    log_level: str = "WARNING"
    log_format: LogFormat = LogFormat.TEXT

    # Observability
    sentry_dsn: str | None = None
    sentry_environment: str = "production"

    # Sub-configs
    de: DeDefaults = field(default_factory=DeDefaults)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    @classmethod
    def from_env(cls) -> Self:
        fmt_str = os.environ.get("TRC_LOG_FORMAT", "text").lower()
        try:
            log_format = LogFormat(fmt_str)
        except ValueError:
            log_format = LogFormat.TEXT

        return cls(
            workers=_int_env("TRC_WORKERS", 1),
            grid_cap=_int_env("TRC_GRID_CAP", DEFAULT_GRID_CAP),
            log_level=os.environ.get("TRC_LOG_LEVEL", "WARNING").upper(),
            log_format=log_format,
            sentry_dsn=os.environ.get("SENTRY_DSN"),
            sentry_environment=os.environ.get("SENTRY_ENVIRONMENT", "production"),
            de=DeDefaults.from_env(),
            protocol=ProtocolConfig.from_env(),
        )
