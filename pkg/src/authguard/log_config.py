"""Logging setup for AuthGuard.

Two loguru sinks: a rotating file in the platform log directory and a console
sink on stderr. stdout is reserved for the JSON the CLI prints.

Environment variables:
    AUTHGUARD_LOG_ENABLED: file sink on/off (default: true).
    AUTHGUARD_LOG_CONSOLE: stderr sink on/off (default: true).
    AUTHGUARD_LOG_LEVEL: minimum level (default: INFO).
    AUTHGUARD_LOG_MAX_SIZE: rotation size of the file sink (default: "10 MB").
    AUTHGUARD_LOG_RETENTION: rotated files to keep (default: 3).
    AUTHGUARD_LOG_DIR: log directory (default: platform user log dir).
"""

# Import built-in modules
from dataclasses import dataclass
import os
from pathlib import Path
import sys

# Import third-party modules
from loguru import logger
from platformdirs import user_log_dir

# Import local modules
from authguard.app import APP_NAME

# Constants
LOG_FILE_NAME = f"{APP_NAME}.log"
LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}:{line}</cyan> | <level>{message}</level>"
)

_FALSY = frozenset({"false", "0", "no", "off", "disabled"})
_TRUTHY = frozenset({"true", "1", "yes", "on", "enabled"})


def _parse_bool_env(name: str, default: bool = True) -> bool:
    """Read a boolean flag; unset or unrecognised values give ``default``."""
    value = os.getenv(name, "").strip().lower()
    if value in _FALSY:
        return False
    if value in _TRUTHY:
        return True
    return default


def _parse_int_env(name: str, default: int) -> int:
    value = os.getenv(name, "").strip()
    return int(value) if value.isdigit() else default


def get_log_file() -> Path:
    """Path of the rotating log file, honouring ``AUTHGUARD_LOG_DIR``."""
    return Path(os.getenv("AUTHGUARD_LOG_DIR") or user_log_dir(APP_NAME)) / LOG_FILE_NAME


@dataclass(frozen=True)
class LogSettings:
    """Resolved sink settings."""

    level: str = "INFO"
    file_enabled: bool = True
    console_enabled: bool = True
    max_size: str = "10 MB"
    retention: int = 3
    log_file: Path | None = None

    @classmethod
    def from_env(cls, level: str | None = None) -> "LogSettings":
        """Read settings from the environment; ``level`` (e.g. ``--log-level``) wins over the env."""
        return cls(
            level=(level or os.getenv("AUTHGUARD_LOG_LEVEL", "INFO")).upper(),
            file_enabled=_parse_bool_env("AUTHGUARD_LOG_ENABLED", True),
            console_enabled=_parse_bool_env("AUTHGUARD_LOG_CONSOLE", True),
            max_size=os.getenv("AUTHGUARD_LOG_MAX_SIZE", "10 MB"),
            retention=_parse_int_env("AUTHGUARD_LOG_RETENTION", 3),
            log_file=get_log_file(),
        )


def setup_logging(level: str | None = None) -> LogSettings:
    """Replace every loguru sink with the configured file and console sinks.

    Args:
        level: Explicit level overriding ``AUTHGUARD_LOG_LEVEL``.

    Returns:
        LogSettings: The settings that were applied.

    """
    settings = LogSettings.from_env(level)
    logger.remove()

    if settings.file_enabled and settings.log_file is not None:
        settings.log_file.parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            settings.log_file,
            rotation=settings.max_size,
            retention=settings.retention,
            compression="zip",
            format=LOG_FORMAT,
            level=settings.level,
            encoding="utf-8",
        )
    if settings.console_enabled:
        logger.add(sys.stderr, format=LOG_FORMAT, level=settings.level)

    if settings.file_enabled:
        logger.debug(f"Logging to {settings.log_file}")
    return settings
