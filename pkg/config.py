"""
Configuration module for the Kolmogorov lab.
Handles environment variables and validation of the numerical defaults.
"""

import logging
import os
from dotenv import load_dotenv
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


class LabSettings(BaseSettings):
    """Numerical defaults shared by every module."""

    model_config = SettingsConfigDict(
        env_prefix="KOLMOGOROV_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Regime logic
    zero_tol: float = Field(default=1e-12, description="Tolerance below which |m_i| counts as zero")

    # Deterministic flow
    flow_step: float = Field(default=1e-2)
    flow_drift_tol: float = Field(default=1e-6)
    max_halvings: int = Field(default=12, ge=0)
    boundary_eps: float = Field(default=1e-14)
    equilibrium_tol: float = Field(default=1e-10)
    period_time_tol: float = Field(default=1e-9)
    period_horizon: float = Field(default=1e4)
    omega_horizon: float = Field(default=400.0, description="Long-horizon check, in units of 1/alpha")
    omega_tol: float = Field(default=1e-4)

    # Stochastic layer
    blowup_norm: float = Field(default=1e6)
    ug_tol: float = Field(default=1e-10)
    ensemble_dt: float = Field(default=1e-2)

    # Harness
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1)
    output_dir: str = Field(default="artifacts")
    log_level: str = Field(default="INFO")

    @field_validator(
        "zero_tol", "flow_step", "flow_drift_tol", "boundary_eps", "equilibrium_tol",
        "period_time_tol", "period_horizon", "omega_horizon", "omega_tol",
        "blowup_norm", "ug_tol", "ensemble_dt",
    )
    @classmethod
    def validate_positive(cls, v, info):
        """Tolerances, steps and horizons must be positive."""
        if not v > 0:
            raise ValueError(f"KOLMOGOROV_{info.field_name.upper()} must be positive, got {v}")
        return v

    @field_validator("threads")
    @classmethod
    def validate_threads(cls, v):
        """At least one worker is required."""
        if v < 1:
            raise ValueError("KOLMOGOROV_THREADS must be at least 1")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        """Validate that the log level is a standard logging level name."""
        level = v.upper()
        if level not in _LOG_LEVELS:
            raise ValueError(f"KOLMOGOROV_LOG_LEVEL must be one of {sorted(_LOG_LEVELS)}")
        return level


def get_settings() -> LabSettings:
    """Get the lab configuration."""
    try:
        return LabSettings()
    except Exception as e:
        logger.error(f"Error loading configuration: {e}")
        logger.error("Check the KOLMOGOROV_* variables in your environment or .env file.")
        raise


# Global configuration instance
settings = get_settings()
