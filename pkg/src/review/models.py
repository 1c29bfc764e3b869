"""
models.py - Core types of a review case.

States follow the journal's review flow; only flows the process text
describes get their own state, the rest are internal transitions:

    Draft -> Submitted -> SealedSubmission (flow 4) -> [EditorAssigned]
      -> UnderReview (flow 7) <-> RevisionRequested -> Revised
      -> SealedRevision (flow 4') -> DecisionPending -> Accepted | Rejected
      -> SealedAcceptance (flow 14) -> Published (flows 15-17)

Suspended is entered only by raising a finding and left only through an
editor's resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from src.integrity.fixity import ALGORITHM, Digest, HashManifest
from src.integrity.stability import StabilityResult


class CaseState(str, Enum):
    DRAFT = "Draft"
    SUBMITTED = "Submitted"
    SEALED_SUBMISSION = "SealedSubmission"
    EDITOR_ASSIGNED = "EditorAssigned"
    UNDER_REVIEW = "UnderReview"
    REVISION_REQUESTED = "RevisionRequested"
    REVISED = "Revised"
    SEALED_REVISION = "SealedRevision"
    DECISION_PENDING = "DecisionPending"
    ACCEPTED = "Accepted"
    SEALED_ACCEPTANCE = "SealedAcceptance"
    PUBLISHED = "Published"
    REJECTED = "Rejected"
    SUSPENDED = "Suspended"


TERMINAL_STATES = frozenset({CaseState.PUBLISHED, CaseState.REJECTED})


class Role(str, Enum):
    AUTHOR = "Author"
    REFEREE = "Referee"
    EDITOR = "Editor"
    DATA_REPOSITORY = "DataRepository"
    SECRETARIAT = "Secretariat"


class CheckpointKind(str, Enum):
    CP_SUBMISSION = "CP_SUBMISSION"
    CP_REVISION = "CP_REVISION"
    CP_ACCEPTANCE = "CP_ACCEPTANCE"
    CP_POSTPUB = "CP_POSTPUB"

    @property
    def flow(self) -> str:
        return CHECKPOINT_FLOWS[self]


CHECKPOINT_FLOWS = {
    CheckpointKind.CP_SUBMISSION: "4",
    CheckpointKind.CP_REVISION: "4'",
    CheckpointKind.CP_ACCEPTANCE: "14",
    CheckpointKind.CP_POSTPUB: "after 17",
}

# State a checkpoint is sealed from, and the state a clean seal leads to
SEAL_FROM = {
    CheckpointKind.CP_SUBMISSION: CaseState.SUBMITTED,
    CheckpointKind.CP_REVISION: CaseState.REVISED,
    CheckpointKind.CP_ACCEPTANCE: CaseState.ACCEPTED,
    CheckpointKind.CP_POSTPUB: CaseState.PUBLISHED,
}
SEAL_TO = {
    CheckpointKind.CP_SUBMISSION: CaseState.SEALED_SUBMISSION,
    CheckpointKind.CP_REVISION: CaseState.SEALED_REVISION,
    CheckpointKind.CP_ACCEPTANCE: CaseState.SEALED_ACCEPTANCE,
    CheckpointKind.CP_POSTPUB: CaseState.PUBLISHED,
}


class ComparisonMode(str, Enum):
    RAW = "raw"
    CONTENT_NORMALIZED = "content-normalized"


class ComparisonOutcome(str, Enum):
    MATCH = "Match"
    MISMATCH = "Mismatch"


class Decision(str, Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"


@dataclass(frozen=True, order=True)
class Checkpoint:
    kind: CheckpointKind
    instance: int

    def __post_init__(self):
        if self.instance < 1:
            raise ValueError("checkpoint instance must be >= 1")

    @property
    def key(self) -> str:
        return f"{self.kind.value}#{self.instance}"

    @classmethod
    def from_key(cls, key: str) -> "Checkpoint":
        kind, _, instance = key.partition("#")
        return cls(CheckpointKind(kind), int(instance))


@dataclass(frozen=True)
class HashRecord:
    """Immutable seal of dataset identity at a checkpoint."""

    checkpoint: Checkpoint
    raw_digest: Digest
    content_manifest: HashManifest
    stability: StabilityResult
    source_link: str
    sealed_at: str
    sealed_by: str
    algorithm: str = ALGORITHM

    @property
    def key(self) -> str:
        return self.checkpoint.key

    def to_dict(self) -> dict:
        return {
            "checkpoint": {"kind": self.checkpoint.kind.value, "instance": self.checkpoint.instance},
            "raw_digest": self.raw_digest.hex,
            "content_manifest": self.content_manifest.to_dict(),
            "stability": self.stability.to_dict(),
            "source_link": self.source_link,
            "sealed_at": self.sealed_at,
            "sealed_by": self.sealed_by,
            "algorithm": self.algorithm,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HashRecord":
        cp = data["checkpoint"]
        return cls(
            checkpoint=Checkpoint(CheckpointKind(cp["kind"]), int(cp["instance"])),
            raw_digest=Digest(data["raw_digest"]),
            content_manifest=HashManifest.from_dict(data["content_manifest"]),
            stability=StabilityResult.from_dict(data["stability"]),
            source_link=data["source_link"],
            sealed_at=data["sealed_at"],
            sealed_by=data["sealed_by"],
            algorithm=data.get("algorithm", ALGORITHM),
        )


def compare_records(a: HashRecord, b: HashRecord, mode: ComparisonMode | str = ComparisonMode.CONTENT_NORMALIZED) -> ComparisonOutcome:
    """Raw compares payload digests; content-normalized compares manifest digests."""
    mode = ComparisonMode(mode)
    if mode is ComparisonMode.RAW:
        same = a.raw_digest == b.raw_digest
    else:
        same = a.content_manifest.manifest_digest == b.content_manifest.manifest_digest
    return ComparisonOutcome.MATCH if same else ComparisonOutcome.MISMATCH


@dataclass(frozen=True)
class DataRevision:
    """An author's declared data change; effective only once an editor approves it."""

    declared_by: str
    note: str
    declared_at: str
    new_download_link: str | None = None
    approved_by: str | None = None
    approved_at: str | None = None
    covers_from: str | None = None
    covers_to: str | None = None

    @property
    def effective(self) -> bool:
        return self.approved_by is not None

    @property
    def consumed(self) -> bool:
        return self.covers_to is not None

    @property
    def covers_interval(self) -> tuple[str | None, str | None]:
        return self.covers_from, self.covers_to

    def to_dict(self) -> dict:
        return {
            "declared_by": self.declared_by,
            "note": self.note,
            "declared_at": self.declared_at,
            "new_download_link": self.new_download_link,
            "approved_by": self.approved_by,
            "approved_at": self.approved_at,
            "covers_from": self.covers_from,
            "covers_to": self.covers_to,
        }


@dataclass(frozen=True)
class Comment:
    seq: int
    round_number: int
    author_role: Role
    author: str
    text: str
    identity_consent: bool

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "round_number": self.round_number,
            "author_role": self.author_role.value,
            "author": self.author,
            "text": self.text,
            "identity_consent": self.identity_consent,
        }


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    kind: str
    actor: str
    note: str

    def to_dict(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "actor": self.actor, "note": self.note}
