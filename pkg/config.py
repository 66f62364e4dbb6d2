"""
Runtime defaults for HOT-DA
Values come from the environment (optionally a .env file) with typed fallbacks
"""

import os
import logging
from dataclasses import dataclass

from dotenv import load_dotenv

from errors import ConfigError

# Load environment variables
load_dotenv()


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"Please set {name} to a number in your .env file (got {raw!r})")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"Please set {name} to an integer in your .env file (got {raw!r})")


@dataclass(frozen=True)
class Settings:
    """Process-wide defaults; the CLI overrides them per invocation"""
    sinkhorn_tol: float
    sinkhorn_max_iter: int
    exact_max_iter: int
    exact_size_limit: int
    epsilon_scale: float
    kmeans_restarts: int
    kmeans_max_iter: int
    seed: int
    kernel_bound: float
    max_workers: int
    output_dir: str
    log_level: str


def load_settings() -> Settings:
    """Read HOTDA_* variables, validating the ones with hard ranges."""
    settings = Settings(
        sinkhorn_tol=_env_float("HOTDA_SINKHORN_TOL", 1e-9),
        sinkhorn_max_iter=_env_int("HOTDA_SINKHORN_MAX_ITER", 10_000),
        exact_max_iter=_env_int("HOTDA_EXACT_MAX_ITER", 100_000),
        exact_size_limit=_env_int("HOTDA_EXACT_SIZE_LIMIT", 40_000),
        epsilon_scale=_env_float("HOTDA_EPSILON_SCALE", 0.01),
        kmeans_restarts=_env_int("HOTDA_KMEANS_RESTARTS", 10),
        kmeans_max_iter=_env_int("HOTDA_KMEANS_MAX_ITER", 300),
        seed=_env_int("HOTDA_SEED", 0),
        kernel_bound=_env_float("HOTDA_KERNEL_BOUND", 1.0),
        max_workers=_env_int("HOTDA_MAX_WORKERS", 1),
        output_dir=os.getenv("HOTDA_OUTPUT_DIR", "hotda_runs"),
        log_level=os.getenv("HOTDA_LOG_LEVEL", "WARNING").upper(),
    )
    if settings.sinkhorn_tol <= 0:
        raise ConfigError("HOTDA_SINKHORN_TOL must be positive")
    if settings.epsilon_scale <= 0:
        raise ConfigError("HOTDA_EPSILON_SCALE must be positive")
    if settings.kernel_bound <= 0:
        raise ConfigError("HOTDA_KERNEL_BOUND must be positive")
    if min(settings.sinkhorn_max_iter, settings.exact_max_iter,
           settings.kmeans_restarts, settings.kmeans_max_iter, settings.max_workers) < 1:
        raise ConfigError("HOTDA_* iteration, restart and worker counts must be >= 1")
    if not isinstance(logging.getLevelName(settings.log_level), int):
        raise ConfigError(f"Unknown HOTDA_LOG_LEVEL {settings.log_level!r}")
    return settings


SETTINGS = load_settings()
