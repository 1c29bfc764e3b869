"""
store.py - A case directory on disk.

    <dir>/events.jsonl                  authoritative event log
    <dir>/case_index.db                 snapshot, rebuilt from the log on demand
    <dir>/notifications/                dated notification CSVs
    <dir>/<case_id>.review-report.json  written on publication
    <dir>/.lock                         held by the one process writing the case
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from src.errors import CaseLocked, UnknownCase
from src.review.case import ReviewCase
from src.review.engine import replay
from src.review.events import EventLog
from src.utils.case_index import INDEX_FILENAME, CaseIndex
from src.utils.logger import get_logger

logger = get_logger("store")

EVENTS_FILENAME = "events.jsonl"
LOCK_FILENAME = ".lock"


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


class CaseStore:
    def __init__(self, directory: str):
        self.directory = directory
        self.events_path = os.path.join(directory, EVENTS_FILENAME)
        self.index_path = os.path.join(directory, INDEX_FILENAME)
        self.lock_path = os.path.join(directory, LOCK_FILENAME)
        self.notifications_dir = os.path.join(directory, "notifications")

    def exists(self) -> bool:
        return os.path.exists(self.events_path) and os.path.getsize(self.events_path) > 0

    def event_log(self) -> EventLog:
        os.makedirs(self.directory, exist_ok=True)
        return EventLog(self.events_path)

    @contextmanager
    def lock(self):
        """
        Hold the case directory for one writer.

        A lock left by a process that no longer exists is taken over.

        Raises:
            CaseLocked: Another live process holds the directory.
        """
        os.makedirs(self.directory, exist_ok=True)
        fd = None
        for _ in range(2):
            try:
                fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                break
            except FileExistsError:
                try:
                    with open(self.lock_path, encoding="utf-8") as f:
                        holder = int(f.read().strip() or 0)
                except (OSError, ValueError):
                    holder = 0
                if holder and _pid_alive(holder):
                    raise CaseLocked(f"{self.directory} is locked by process {holder}")
                logger.warning(f"Removing stale lock in {self.directory} (process {holder or '?'})")
                try:
                    os.remove(self.lock_path)
                except FileNotFoundError:
                    pass
        if fd is None:
            raise CaseLocked(f"{self.directory} is locked")
        try:
            os.write(fd, str(os.getpid()).encode("ascii"))
            os.close(fd)
            yield self
        finally:
            try:
                os.remove(self.lock_path)
            except FileNotFoundError:
                pass

    def load(self) -> ReviewCase:
        """
        Replay the case from its log and refresh the snapshot if stale.

        Raises:
            UnknownCase: The directory holds no case.
            ChainBroken / GapInSequence: The log was tampered with.
        """
        if not self.exists():
            raise UnknownCase(f"No case in {self.directory}")
        case = replay(self.event_log())
        with CaseIndex(self.index_path) as index:
            if index.last_seq(case.case_id) != case.last_seq:
                logger.info(f"Rebuilding snapshot of {case.case_id} from the event log")
                index.sync_case(case)
        return case

    def sync(self, case: ReviewCase) -> None:
        with CaseIndex(self.index_path) as index:
            index.sync_case(case)
