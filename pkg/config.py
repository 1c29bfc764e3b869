"""
Configuration settings for the fixity review engine.
Defaults live here; a JSON config file and command-line flags override them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from datetime import datetime, timedelta, timezone
from typing import Any

from dotenv import load_dotenv

from src.errors import ConfigError
from src.utils.clock import Clock, SteppedClock, SystemClock

# Load environment variables
load_dotenv()

# File paths
BASE_DIR = os.getenv("FIXITY_REVIEW_HOME", os.getcwd())
CASES_DIR = os.path.join(BASE_DIR, "cases")
LOG_DIR = os.path.join(BASE_DIR, "logs")
LOG_FILE = os.path.join(LOG_DIR, "fixity-review.log")
CONFIG_FILE = os.getenv("FIXITY_REVIEW_CONFIG", "fixity-review.json")

LOG_LEVEL = os.getenv("FIXITY_REVIEW_LOG_LEVEL", "INFO")

# Checkpoint sealing
PROBE_COUNT = 2  # Two fetches were enough to expose the recompressing repository
COMPARISON_MODE = "content-normalized"  # Options: content-normalized, raw

# HTTP fetch limits
FETCH_MAX_BYTES = 512 * 1024 * 1024
FETCH_TIMEOUT = 30.0  # seconds
FETCH_MAX_REDIRECTS = 5
USER_AGENT = "fixity-review/1.0"

# Clock: "system" for real time, "stepped" for reproducible runs
CLOCK = "system"
CLOCK_START = "2019-03-01T09:00:00Z"
CLOCK_STEP_SECONDS = 60

COMPARISON_MODES = ("content-normalized", "raw")
CLOCK_KINDS = ("system", "stepped")


@dataclass(frozen=True)
class Settings:
    """Effective settings after defaults, config file and flags are merged."""

    probe_count: int = PROBE_COUNT
    comparison_mode: str = COMPARISON_MODE
    fetch_max_bytes: int = FETCH_MAX_BYTES
    fetch_timeout: float = FETCH_TIMEOUT
    fetch_max_redirects: int = FETCH_MAX_REDIRECTS
    user_agent: str = USER_AGENT
    clock: str = CLOCK
    clock_start: str = CLOCK_START
    clock_step_seconds: int = CLOCK_STEP_SECONDS
    log_level: str = LOG_LEVEL
    cases_dir: str = CASES_DIR
    log_file: str | None = None

    def make_clock(self) -> Clock:
        if self.clock == "stepped":
            start = datetime.strptime(self.clock_start, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
            return SteppedClock(start, timedelta(seconds=self.clock_step_seconds))
        return SystemClock()


def _validate(settings: Settings) -> Settings:
    if settings.probe_count < 2:
        raise ConfigError(f"probe_count must be >= 2, got {settings.probe_count}")
    if settings.comparison_mode not in COMPARISON_MODES:
        raise ConfigError(f"comparison_mode must be one of {COMPARISON_MODES}")
    if settings.clock not in CLOCK_KINDS:
        raise ConfigError(f"clock must be one of {CLOCK_KINDS}")
    if settings.fetch_max_bytes <= 0 or settings.fetch_timeout <= 0:
        raise ConfigError("fetch limits must be positive")
    if settings.fetch_max_redirects < 0:
        raise ConfigError("fetch_max_redirects must be >= 0")
    if settings.clock_step_seconds < 2:
        # ZIP timestamps have two-second resolution
        raise ConfigError("clock_step_seconds must be >= 2")
    try:
        datetime.strptime(settings.clock_start, "%Y-%m-%dT%H:%M:%SZ")
    except ValueError as e:
        raise ConfigError(f"clock_start is not a UTC timestamp: {settings.clock_start}") from e
    return settings


def _coerce(values: dict[str, Any], source: str) -> dict[str, Any]:
    known = {f.name for f in fields(Settings)}
    out: dict[str, Any] = {}
    for key, value in values.items():
        name = key.replace("-", "_")
        if name not in known:
            raise ConfigError(f"Unknown setting {key!r} in {source}")
        if value is None:
            continue
        default = getattr(Settings(), name)
        try:
            if default is None:
                out[name] = value
            elif isinstance(default, int):
                out[name] = int(value)
            elif isinstance(default, float):
                out[name] = float(value)
            else:
                out[name] = str(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Bad value for {key!r} in {source}: {value!r}") from e
    return out


def load_settings(path: str | None = None, overrides: dict[str, Any] | None = None) -> Settings:
    """
    Merge defaults, the JSON config file and flag overrides (flags win).

    Args:
        path (str, optional): Config file. Defaults to CONFIG_FILE; a missing
            default file is not an error, a missing explicit one is.
        overrides (dict, optional): Values from command-line flags; None
            values are ignored.

    Returns:
        Settings: The validated settings.
    """
    settings = Settings()
    config_path = path or CONFIG_FILE
    if os.path.exists(config_path):
        try:
            with open(config_path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config file {config_path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {config_path} must contain a JSON object")
        settings = replace(settings, **_coerce(data, config_path))
    elif path:
        raise ConfigError(f"Config file not found: {path}")

    if overrides:
        settings = replace(settings, **_coerce(overrides, "command line"))
    return _validate(settings)


