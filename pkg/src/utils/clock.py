"""Injectable clocks. Real time by default, a stepped clock for reproducible runs."""

from __future__ import annotations

import threading
from datetime import datetime, timedelta, timezone
from typing import Protocol

DEFAULT_START = datetime(2019, 3, 1, 9, 0, 0, tzinfo=timezone.utc)


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc).replace(microsecond=0)


class SteppedClock:
    """Deterministic clock: every call to ``now`` advances by ``step``.

    ZIP entry times have two-second resolution, so steps used with the
    timestamp-recompressing repository should be at least two seconds.
    """

    def __init__(self, start: datetime = DEFAULT_START, step: timedelta = timedelta(seconds=60)):
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
        self._current = start
        self._step = step
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            value = self._current
            self._current = value + self._step
            return value


def isoformat(moment: datetime) -> str:
    """UTC timestamp in the fixed form used in logs and reports."""
    return moment.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_isoformat(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
