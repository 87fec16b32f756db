"""Logging setup for the CLI; library modules only call ``logging.getLogger(__name__)``."""

from __future__ import annotations

import logging

from hieropf import settings

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_VALID_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def resolve_level(name: str | None) -> int:
    name = (name or settings.log_level()).upper()
    if name not in _VALID_LEVELS:
        name = "WARNING"
    return getattr(logging, name)


def configure_logging(level: str | None = None) -> logging.Logger:
    """Attach a single stderr handler to the ``hieropf`` logger (idempotent)."""
    logger = logging.getLogger("hieropf")
    logger.setLevel(resolve_level(level))
    if not any(getattr(h, "_hieropf_handler", False) for h in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._hieropf_handler = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
    return logger
