"""
events.py - Hash-chained review events and their append-only log.

Each event is one line of canonical JSON. ``this_digest`` is the SHA-256 of
the event's canonical bytes without that field, and ``prev_digest`` repeats
the previous event's ``this_digest`` (64 zeros for the first event). Editing,
dropping or reordering any line breaks the chain.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field, replace

from src.errors import ChainBroken, GapInSequence
from src.integrity.fixity import digest_bytes
from src.review.models import Role
from src.utils.canonical import canonical_bytes
from src.utils.logger import get_logger

logger = get_logger("events")

GENESIS_DIGEST = "0" * 64
EVENT_FIELDS = frozenset(
    {"seq", "case_id", "actor_role", "actor", "event_type", "payload", "at", "prev_digest", "this_digest"}
)


@dataclass(frozen=True)
class ReviewEvent:
    seq: int
    case_id: str
    actor_role: Role
    actor: str
    event_type: str
    payload: dict = field(hash=False)
    at: str
    prev_digest: str
    this_digest: str = ""

    def body(self) -> dict:
        return {
            "seq": self.seq,
            "case_id": self.case_id,
            "actor_role": self.actor_role.value,
            "actor": self.actor,
            "event_type": self.event_type,
            "payload": self.payload,
            "at": self.at,
            "prev_digest": self.prev_digest,
        }

    def compute_digest(self) -> str:
        return digest_bytes(canonical_bytes(self.body())).hex

    def to_dict(self) -> dict:
        return {**self.body(), "this_digest": self.this_digest}

    def to_line(self) -> bytes:
        return canonical_bytes(self.to_dict()) + b"\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ReviewEvent":
        if set(data) != EVENT_FIELDS:
            raise ValueError(f"unexpected event fields: {sorted(set(data) ^ EVENT_FIELDS)}")
        if not isinstance(data["seq"], int) or not isinstance(data["payload"], dict):
            raise ValueError("seq must be an integer and payload an object")
        return cls(
            seq=data["seq"],
            case_id=data["case_id"],
            actor_role=Role(data["actor_role"]),
            actor=data["actor"],
            event_type=data["event_type"],
            payload=data["payload"],
            at=data["at"],
            prev_digest=data["prev_digest"],
            this_digest=data["this_digest"],
        )


def chain_event(
    previous: ReviewEvent | None,
    case_id: str,
    actor_role: Role,
    actor: str,
    event_type: str,
    payload: dict,
    at: str,
) -> ReviewEvent:
    """Create the event that follows ``previous`` (None for the first)."""
    unsealed = ReviewEvent(
        seq=1 if previous is None else previous.seq + 1,
        case_id=case_id,
        actor_role=Role(actor_role),
        actor=actor,
        event_type=event_type,
        # Round-trip so tuples and enums become plain JSON before digesting
        payload=json.loads(canonical_bytes(payload)),
        at=at,
        prev_digest=GENESIS_DIGEST if previous is None else previous.this_digest,
    )
    return replace(unsealed, this_digest=unsealed.compute_digest())


def verify_chain(data: bytes) -> list[ReviewEvent]:
    """
    Parse and verify a complete log.

    Raises:
        ChainBroken: A line is not canonical JSON, its digest does not match,
            it does not link to its predecessor, or the file is truncated.
        GapInSequence: The chain is intact but a sequence number is skipped.
    """
    if not data:
        return []
    lines = data.split(b"\n")
    tail = lines.pop()
    events: list[ReviewEvent] = []
    previous_digest = GENESIS_DIGEST
    expected = 1

    for line in lines:
        try:
            obj = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as e:
            raise ChainBroken(expected, f"not valid JSON ({e})") from e
        if not isinstance(obj, dict) or canonical_bytes(obj) != line:
            raise ChainBroken(expected, "line is not in canonical form")
        try:
            event = ReviewEvent.from_dict(obj)
        except (KeyError, TypeError, ValueError) as e:
            raise ChainBroken(expected, f"malformed event ({e})") from e
        if event.compute_digest() != event.this_digest:
            raise ChainBroken(expected, "event digest does not match its content")
        if event.seq != expected:
            raise GapInSequence(expected, found=event.seq)
        if event.prev_digest != previous_digest:
            raise ChainBroken(expected, "prev_digest does not link to the previous event")
        events.append(event)
        previous_digest = event.this_digest
        expected += 1

    if tail:
        raise ChainBroken(expected, "log ends with an incomplete line")
    return events


class EventLog:
    """
    Append-only JSON Lines log, on disk or in memory.

    Appends are serialized; each one is flushed and fsynced before returning.
    """

    def __init__(self, path: str | None = None):
        self.path = path
        self._memory = bytearray()
        self._lock = threading.Lock()

    def append(self, event: ReviewEvent) -> None:
        line = event.to_line()
        with self._lock:
            if self.path is None:
                self._memory.extend(line)
                return
            with open(self.path, "ab") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
        logger.debug(f"Appended {event.event_type} #{event.seq} for {event.case_id}")

    def raw_bytes(self) -> bytes:
        with self._lock:
            if self.path is None:
                return bytes(self._memory)
            if not os.path.exists(self.path):
                return b""
            with open(self.path, "rb") as f:
                return f.read()

    def events(self) -> list[ReviewEvent]:
        return verify_chain(self.raw_bytes())
