"""The refpriv utility-privacy benchmark for defenses that use reference data."""

from __future__ import annotations

import logging

from .const import DEFAULT_LOG_LEVEL, LOG_LEVELS, PACKAGE

_LOGGER = logging.getLogger(__name__)


def configure_logging(log_level: str | None = None) -> str:
    """Set the package logger level; returns the level actually applied."""
    log_level_str = (log_level or DEFAULT_LOG_LEVEL).upper()
    if log_level_str not in LOG_LEVELS:
        _LOGGER.warning(
            "Invalid log level '%s' configured; defaulting to '%s'.",
            log_level_str,
            DEFAULT_LOG_LEVEL,
        )
        log_level_str = DEFAULT_LOG_LEVEL
    package_logger = logging.getLogger(__name__.split(".")[0])
    package_logger.setLevel(logging.getLevelName(log_level_str))
    _LOGGER.debug("Log level for '%s' set to %s", PACKAGE, log_level_str)
    return log_level_str
