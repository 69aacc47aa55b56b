"""
Process-level configuration for berkson-md.

This module provides centralized settings management using Pydantic settings.
It handles the concerns that belong to the running process rather than to a
single estimation run:

- Application identity (name, environment)
- Logging (level and json/text format)
- Default parallelism degree for Monte Carlo replications
- Locations of the shipped presets and of the output directory

Per-run choices (model, bandwidths, grid, alpha, seed, ...) live in
``berkson_md.schemas.config.RunConfig`` and are merged from JSON files and
command-line flags by the CLI.

Example:
    ```python
    from berkson_md.core.config import settings

    print(f"Replications run on {settings.worker_count()} worker(s)")
    ```

Note:
    Values are read from environment variables prefixed with ``BERKSON_MD_``
    (for example ``BERKSON_MD_WORKERS=4``) and from an optional ``.env`` file.
"""

import os
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

_REPO_ROOT = Path(__file__).resolve().parents[3]


class Settings(BaseSettings):
    """
    Process settings for the estimation library and CLI.

    Attributes:
        app_name (str): Name reported in structured log records
        environment (str): development / ci / production
        log_level (str): Logging level
        log_format (str): Log format (json/text)
        workers (int): Default number of worker processes for Monte Carlo runs
        presets_dir (Path): Directory holding the reproduction presets
        output_dir (Path): Directory where artifacts are written by default

    Example:
        ```python
        settings = Settings(workers=2)
        assert settings.workers == 2
        ```
    """

    app_name: str = "berkson-md"
    environment: str = Field(default="development")

    # Logging settings
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="text")  # json or text

    # Parallelism for run_mc; the --workers flag overrides it
    workers: int = Field(default=1, ge=1)

    presets_dir: Path = Field(default=_REPO_ROOT / "presets")
    output_dir: Path = Field(default=Path("."))

    @field_validator("environment")
    @classmethod
    def validate_environment(cls, v):
        """
        Validate that environment is one of the allowed values.

        Raises:
            ValueError: If environment is not in allowed list
        """
        allowed_environments = ["development", "ci", "production"]
        if v not in allowed_environments:
            raise ValueError(f"Environment must be one of: {allowed_environments}")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        """
        Validate that log level is one of the standard logging levels.

        Returns:
            str: Validated and uppercased log level

        Raises:
            ValueError: If log level is not in allowed list
        """
        allowed_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in allowed_levels:
            raise ValueError(f"Log level must be one of: {allowed_levels}")
        return v.upper()

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v):
        """Validate that log format is one of the supported formats."""
        allowed_formats = ["json", "text"]
        if v not in allowed_formats:
            raise ValueError(f"Log format must be one of: {allowed_formats}")
        return v

    @property
    def cpu_limit(self) -> int:
        """Upper bound on useful worker processes for this machine."""
        return os.cpu_count() or 1

    def worker_count(self, requested: Optional[int] = None) -> int:
        """Worker processes for a run: ``requested`` or ``workers``, capped at ``cpu_limit``."""
        return max(1, min(self.workers if requested is None else requested, self.cpu_limit))

    model_config = SettingsConfigDict(
        env_prefix="BERKSON_MD_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


# Global settings instance
settings = Settings()
