from __future__ import annotations

"""
Process configuration
"""
from functools import lru_cache
from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings loaded from GENSMOOTH_* environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="GENSMOOTH_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    # Per-sample diagnostics fan out over this many worker threads.
    threads: int = 1

    # Dense |θ| × m_f Jacobians larger than this are rejected up front.
    jacobian_memory_budget_bytes: int = 1 << 30

    # Base directory for run outputs when neither --out nor output_dir is set.
    output_root: str = "runs"

    # Values are clamped to this before log() in traces so CSVs never hold -inf.
    log_floor: float = 1e-300

    # Fixed SVG element-id salt; keeps rendered charts byte-stable.
    svg_hashsalt: str = "gensmooth"


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
