"""
Logging helpers shared by every module.

Loggers are named under the ``fixity_review`` root so a single call to
:func:`setup_logging` controls the whole engine.
"""

from __future__ import annotations

import logging
import os

from rich.console import Console
from rich.logging import RichHandler

ROOT_LOGGER = "fixity_review"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Operator diagnostics go to stderr so stdout stays machine-readable
_console = Console(stderr=True)


def get_logger(name: str | None = None) -> logging.Logger:
    """Return the engine logger, or a named child of it."""
    if not name:
        return logging.getLogger(ROOT_LOGGER)
    if name.startswith(ROOT_LOGGER):
        return logging.getLogger(name)
    return logging.getLogger(f"{ROOT_LOGGER}.{name}")


def setup_logging(level: str = "INFO", log_file: str | None = None) -> logging.Logger:
    """
    Configure console (and optionally file) logging for the engine.

    Args:
        level (str): Level name, e.g. 'INFO' or 'DEBUG'.
        log_file (str, optional): Also append records to this file.

    Returns:
        logging.Logger: The configured root engine logger.
    """
    logger = get_logger()
    logger.setLevel(level.upper())
    logger.handlers.clear()
    logger.propagate = False

    console_handler = RichHandler(console=_console, show_path=False, markup=False)
    console_handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    logger.addHandler(console_handler)

    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
        logger.addHandler(file_handler)

    # Suppress connection-pool chatter from requests
    logging.getLogger("urllib3").setLevel(logging.WARNING)
    return logger


def console_message(message: str, style: str | None = None) -> None:
    """Print a human diagnostic line on standard error."""
    _console.print(message, style=style, markup=False, highlight=False)
