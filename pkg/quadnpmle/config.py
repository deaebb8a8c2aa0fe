"""
quadnpmle Configuration Management

Centralized configuration handling for environment variables and flat
key-value config files. Provides type-safe access to settings with proper
defaults and validation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from quadnpmle.errors import ConfigError
from quadnpmle.logs_utils import safe_push_log

PROJECT_ROOT = Path(__file__).resolve().parent.parent

ALGORITHMS = ("em-exchange", "em")
GRID_MODES = ("data_range", "support_bound", "explicit")


# === Early .env Loading ===
_env_file = PROJECT_ROOT / ".env"
if _env_file.exists():
    try:
        from dotenv import load_dotenv

        load_dotenv(_env_file, override=False)
    except ImportError:
        safe_push_log("⚠️ python-dotenv not installed, skipping .env loading")
    except Exception as e:
        safe_push_log(f"⚠️ Failed to load .env file: {e}")


# === Default Configuration ===
_DEFAULTS = {
    # === Compression ===
    "DEFAULT_ORDER": "25",  # Quadrature order J (0 = fit on the full empirical measure)
    "MAX_ORDER": "40",  # Orders above this are clamped with a warning
    "HETERO_ORDER": "8",  # Total degree for 2-D Tchakaloff compression
    "MOMENT_TOL": "1e-8",  # Standardized moment residual counted as a match
    # === Grid ===
    "GRID_SIZE": "300",  # Number of mixing atoms theta_k
    "GRID_MODE": "data_range",  # data_range, support_bound or explicit
    # === Solver ===
    "SOLVER_TOL": "1e-8",  # Dual-gap certificate target per unit mass
    "MAX_EM": "50000",  # EM iteration cap
    "MAX_EXCHANGE": "1000",  # Exchange step cap
    "EXCHANGE_EVERY": "100",  # EM steps between exchange steps
    "ALGORITHM": "em-exchange",  # em-exchange or em
    # === Theory ===
    "THEORY_C": "1",  # Universal constant of the order prescription
    "THEORY_C_T0": "1",  # Heteroscedastic order constant
    "HETERO_T0": "10",  # Precision band [1/T0, T0]
    # === Simulation & Benchmark ===
    "SEED": "0",
    "BENCH_N": "100000",  # Sample size for simulate and bench
    "BENCH_REPETITIONS": "10",
    "PRIOR_LOW": "-2",  # Uniform prior lower end
    "PRIOR_HIGH": "2",  # Uniform prior upper end
    "OUTPUT_FOLDER": "./results",
    # === System ===
    "DETERMINISTIC": "false",  # Serial compensated reductions, no parallel repetitions
    "DEBUG": "false",
}


# === Helper Functions ===
def _to_bool(v: str | None, default: bool = False) -> bool:
    """Convert string to boolean"""
    if v is None:
        return default
    return str(v).strip().lower() in {"1", "true", "yes", "on"}


def _to_int(key: str, v: str) -> int:
    """Convert string to int, accepting forms like '1e5'"""
    try:
        value = float(str(v).strip())
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {v!r}") from None
    if not value.is_integer():
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    return int(value)


def _to_float(key: str, v: str) -> float:
    """Convert string to float"""
    try:
        return float(str(v).strip())
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {v!r}") from None


def _read_config_file(config_file: str) -> dict[str, str]:
    """Read a flat KEY=VALUE file; unknown keys are reported and ignored"""
    path = Path(config_file)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")

    try:
        from dotenv import dotenv_values
    except ImportError:
        raise ConfigError("python-dotenv is required to read --config files") from None

    values = {}
    for key, value in dotenv_values(path).items():
        normalized = key.strip().upper().replace("-", "_")
        if normalized not in _DEFAULTS:
            safe_push_log(f"⚠️ Unknown config key ignored: {key}")
            continue
        if value is not None:
            values[normalized] = value
    return values


# === Settings Dataclass ===
@dataclass(frozen=True)
class Settings:
    """
    Immutable configuration settings for quadnpmle.

    Settings are loaded once per config file and cached. Use get_settings()
    to access the instance.
    """

    # Compression
    DEFAULT_ORDER: int
    MAX_ORDER: int
    HETERO_ORDER: int
    MOMENT_TOL: float

    # Grid
    GRID_SIZE: int
    GRID_MODE: str

    # Solver
    SOLVER_TOL: float
    MAX_EM: int
    MAX_EXCHANGE: int
    EXCHANGE_EVERY: int
    ALGORITHM: str

    # Theory
    THEORY_C: float
    THEORY_C_T0: float
    HETERO_T0: float

    # Simulation & Benchmark
    SEED: int
    BENCH_N: int
    BENCH_REPETITIONS: int
    PRIOR_LOW: float
    PRIOR_HIGH: float
    OUTPUT_FOLDER: Path

    # System
    DETERMINISTIC: bool
    DEBUG: bool
    CONFIG_FILE: Path | None = None


# === Configuration Loader ===
@lru_cache(maxsize=4)
def get_settings(config_file: str | None = None) -> Settings:
    """
    Read configuration once, merging defaults, environment and config file.

    Args:
        config_file: Optional flat KEY=VALUE file; its values override the
            environment

    Returns:
        Settings: Immutable settings object with all configuration values

    Raises:
        ConfigError: If a value cannot be parsed or is out of range
    """
    config = _DEFAULTS.copy()

    # 1️⃣ Override defaults with environment variables
    for key in config:
        env_value = os.getenv(key)
        if env_value is not None:
            config[key] = env_value

    # 2️⃣ Override with the config file
    if config_file:
        config.update(_read_config_file(config_file))

    # 3️⃣ Normalize paths
    output_folder = Path(config["OUTPUT_FOLDER"].strip())
    if not output_folder.is_absolute():
        output_folder = (Path.cwd() / output_folder).resolve()

    algorithm = config["ALGORITHM"].strip().lower()
    grid_mode = config["GRID_MODE"].strip().lower()

    settings = Settings(
        DEFAULT_ORDER=_to_int("DEFAULT_ORDER", config["DEFAULT_ORDER"]),
        MAX_ORDER=_to_int("MAX_ORDER", config["MAX_ORDER"]),
        HETERO_ORDER=_to_int("HETERO_ORDER", config["HETERO_ORDER"]),
        MOMENT_TOL=_to_float("MOMENT_TOL", config["MOMENT_TOL"]),
        GRID_SIZE=_to_int("GRID_SIZE", config["GRID_SIZE"]),
        GRID_MODE=grid_mode,
        SOLVER_TOL=_to_float("SOLVER_TOL", config["SOLVER_TOL"]),
        MAX_EM=_to_int("MAX_EM", config["MAX_EM"]),
        MAX_EXCHANGE=_to_int("MAX_EXCHANGE", config["MAX_EXCHANGE"]),
        EXCHANGE_EVERY=_to_int("EXCHANGE_EVERY", config["EXCHANGE_EVERY"]),
        ALGORITHM=algorithm,
        THEORY_C=_to_float("THEORY_C", config["THEORY_C"]),
        THEORY_C_T0=_to_float("THEORY_C_T0", config["THEORY_C_T0"]),
        HETERO_T0=_to_float("HETERO_T0", config["HETERO_T0"]),
        SEED=_to_int("SEED", config["SEED"]),
        BENCH_N=_to_int("BENCH_N", config["BENCH_N"]),
        BENCH_REPETITIONS=_to_int("BENCH_REPETITIONS", config["BENCH_REPETITIONS"]),
        PRIOR_LOW=_to_float("PRIOR_LOW", config["PRIOR_LOW"]),
        PRIOR_HIGH=_to_float("PRIOR_HIGH", config["PRIOR_HIGH"]),
        OUTPUT_FOLDER=output_folder,
        DETERMINISTIC=_to_bool(config["DETERMINISTIC"], False),
        DEBUG=_to_bool(config["DEBUG"], False),
        CONFIG_FILE=Path(config_file).resolve() if config_file else None,
    )
    _validate(settings)
    return settings


def _validate(s: Settings) -> None:
    """Range checks that cannot be expressed by the field types"""
    if s.ALGORITHM not in ALGORITHMS:
        raise ConfigError(f"ALGORITHM must be one of {ALGORITHMS}, got {s.ALGORITHM!r}")
    if s.GRID_MODE not in GRID_MODES:
        raise ConfigError(f"GRID_MODE must be one of {GRID_MODES}, got {s.GRID_MODE!r}")
    if s.DEFAULT_ORDER < 0 or s.HETERO_ORDER < 0:
        raise ConfigError("Orders must be >= 0")
    if s.MAX_ORDER < 1:
        raise ConfigError("MAX_ORDER must be >= 1")
    if s.GRID_SIZE < 2:
        raise ConfigError("GRID_SIZE must be >= 2")
    if s.SOLVER_TOL <= 0 or s.MOMENT_TOL <= 0:
        raise ConfigError("Tolerances must be > 0")
    if s.MAX_EM < 1 or s.EXCHANGE_EVERY < 1 or s.MAX_EXCHANGE < 0:
        raise ConfigError("Iteration caps must be positive")
    if s.THEORY_C <= 0 or s.THEORY_C_T0 <= 0:
        raise ConfigError("Theory constants must be > 0")
    if s.HETERO_T0 <= 1:
        raise ConfigError("HETERO_T0 must be > 1")
    if s.BENCH_N < 1 or s.BENCH_REPETITIONS < 1:
        raise ConfigError("BENCH_N and BENCH_REPETITIONS must be >= 1")
    if not s.PRIOR_LOW < s.PRIOR_HIGH:
        raise ConfigError("PRIOR_LOW must be < PRIOR_HIGH")


def print_config_summary(s: Settings | None = None) -> None:
    """Print a summary of the current configuration for debugging"""
    s = s or get_settings()

    safe_push_log("=" * 80)
    safe_push_log("🔧 quadnpmle Configuration Summary")
    safe_push_log("=" * 80)
    safe_push_log(f"🐞 Debug mode: {'ON' if s.DEBUG else 'OFF'}")
    safe_push_log(f"🔒 Deterministic mode: {'ON' if s.DETERMINISTIC else 'OFF'}")
    if s.CONFIG_FILE:
        safe_push_log(f"📄 Config file: {s.CONFIG_FILE}")

    safe_push_log("🗜️ Compression:")
    safe_push_log(f"   Order J: {s.DEFAULT_ORDER} (cap {s.MAX_ORDER})")
    safe_push_log(f"   Hetero total degree: {s.HETERO_ORDER}")
    safe_push_log(f"   Moment tolerance: {s.MOMENT_TOL:g}")

    safe_push_log("📐 Solver:")
    safe_push_log(f"   Grid: {s.GRID_SIZE} points ({s.GRID_MODE})")
    safe_push_log(f"   Algorithm: {s.ALGORITHM}")
    safe_push_log(f"   Certificate tolerance: {s.SOLVER_TOL:g}")
    safe_push_log(
        f"   Caps: EM {s.MAX_EM}, exchange {s.MAX_EXCHANGE} every {s.EXCHANGE_EVERY}"
    )

    safe_push_log("📊 Simulation:")
    safe_push_log(f"   n = {s.BENCH_N}, repetitions = {s.BENCH_REPETITIONS}")
    safe_push_log(f"   Prior: Uniform[{s.PRIOR_LOW:g}, {s.PRIOR_HIGH:g}]")
    safe_push_log(f"   Seed: {s.SEED}")
    safe_push_log(f"   Output folder: {s.OUTPUT_FOLDER}")
    safe_push_log("=" * 80)


# === Auto-print on direct execution ===
if __name__ == "__main__":
    print_config_summary()
