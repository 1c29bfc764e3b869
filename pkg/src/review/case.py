"""
case.py - The review case aggregate and the fold that builds it from events.

``ReviewCase.apply`` is the only place state changes. It validates the event
against the current state before touching anything, so a rejected event
leaves the case as it was. Live operations and replay share it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

from src.errors import (
    InvalidState,
    MissingDatasetRef,
    NoPendingRevision,
    NotEditor,
    NotParticipant,
    UnknownCase,
    WorkflowError,
)
from src.repository.models import DatasetRef
from src.review.detection import ManipulationFinding, Notification
from src.review.events import GENESIS_DIGEST, ReviewEvent
from src.review.models import (
    SEAL_FROM,
    SEAL_TO,
    TERMINAL_STATES,
    AuditEntry,
    CaseState,
    Checkpoint,
    CheckpointKind,
    Comment,
    DataRevision,
    Decision,
    HashRecord,
    Role,
)

# Non-terminal states in which an editor may still approve a data revision
APPROVAL_STATES = frozenset({
    CaseState.UNDER_REVIEW,
    CaseState.REVISION_REQUESTED,
    CaseState.REVISED,
    CaseState.SEALED_REVISION,
    CaseState.DECISION_PENDING,
    CaseState.ACCEPTED,
})


@dataclass
class ReviewCase:
    case_id: str
    dataset_ref: DatasetRef | None = None
    state: CaseState | None = None
    records: dict[str, HashRecord] = field(default_factory=dict)
    revisions: list[DataRevision] = field(default_factory=list)
    findings: list[ManipulationFinding] = field(default_factory=list)
    participants: dict[Role, list[str]] = field(default_factory=dict)
    manuscript_meta: dict = field(default_factory=dict)
    comments: list[Comment] = field(default_factory=list)
    consent: dict[str, bool] = field(default_factory=dict)
    affiliations: dict[str, str] = field(default_factory=dict)
    audit_entries: list[AuditEntry] = field(default_factory=list)
    notifications: list[Notification] = field(default_factory=list)
    state_trail: list[CaseState] = field(default_factory=list)
    baseline_key: str | None = None
    acceptance_key: str | None = None
    suspended_from: CaseState | None = None
    decision: Decision | None = None
    round_number: int = 0
    published_at: str | None = None
    report_digest: str | None = None
    last_seq: int = 0
    last_digest: str = GENESIS_DIGEST

    # --- queries -------------------------------------------------------------

    def is_participant(self, identity: str) -> bool:
        return any(identity in people for people in self.participants.values())

    def people(self, role: Role) -> list[str]:
        return self.participants.get(role, [])

    @property
    def author(self) -> str | None:
        authors = self.people(Role.AUTHOR)
        return authors[0] if authors else None

    @property
    def editor(self) -> str | None:
        editors = self.people(Role.EDITOR)
        return editors[0] if editors else None

    def finding(self, finding_id: str) -> ManipulationFinding | None:
        for f in self.findings:
            if f.finding_id == finding_id:
                return f
        return None

    def open_findings(self) -> list[ManipulationFinding]:
        return [f for f in self.findings if f.is_open]

    def records_of(self, kind: CheckpointKind) -> list[HashRecord]:
        return sorted((r for r in self.records.values() if r.checkpoint.kind is kind),
                      key=lambda r: r.checkpoint.instance)

    def next_checkpoint(self, kind: CheckpointKind) -> Checkpoint:
        return Checkpoint(kind, len(self.records_of(kind)) + 1)

    @property
    def baseline(self) -> HashRecord | None:
        return self.records.get(self.baseline_key) if self.baseline_key else None

    @property
    def acceptance_record(self) -> HashRecord | None:
        return self.records.get(self.acceptance_key) if self.acceptance_key else None

    def pending_revision_index(self) -> int | None:
        """Latest declared revision not yet approved."""
        for i in range(len(self.revisions) - 1, -1, -1):
            if not self.revisions[i].effective:
                return i
        return None

    def approved_revision_index(self) -> int | None:
        """Oldest approved revision that has not yet covered a change."""
        for i, rev in enumerate(self.revisions):
            if rev.effective and not rev.consumed:
                return i
        return None

    @property
    def revision_declared(self) -> bool:
        return any(not rev.consumed for rev in self.revisions)

    # --- fold ----------------------------------------------------------------

    def apply(self, event: ReviewEvent) -> None:
        """
        Fold one event into the case.

        Raises:
            WorkflowError: The event does not continue this case's chain, or
                is not allowed in the current state. Nothing is changed.
        """
        if event.case_id != self.case_id:
            raise UnknownCase(f"Event for {event.case_id} applied to {self.case_id}")
        if event.seq != self.last_seq + 1 or event.prev_digest != self.last_digest:
            raise WorkflowError(f"Event #{event.seq} does not follow #{self.last_seq} of {self.case_id}")
        handler = _HANDLERS.get(event.event_type)
        if handler is None:
            raise WorkflowError(f"Unknown event type {event.event_type!r}")

        before = self.state
        handler(self, event)
        self.last_seq = event.seq
        self.last_digest = event.this_digest
        if self.state is not before:
            self.state_trail.append(self.state)

    # --- guards --------------------------------------------------------------

    def _require_state(self, operation: str, *allowed: CaseState) -> None:
        if self.state not in allowed:
            raise InvalidState(operation, self.state.value if self.state else "None",
                               tuple(s.value for s in allowed))

    def _require_editor(self, editor: str) -> None:
        if editor not in self.people(Role.EDITOR):
            raise NotEditor(f"{editor!r} is not an editor of case {self.case_id}")

    def _require_author(self, author: str) -> None:
        if author not in self.people(Role.AUTHOR):
            raise NotParticipant(f"{author!r} is not the author of case {self.case_id}")

    def _require_referee(self, referee: str) -> None:
        if referee not in self.people(Role.REFEREE):
            raise NotParticipant(f"{referee!r} is not a referee of case {self.case_id}")

    def _add_participant(self, role: Role, identity: str) -> None:
        people = self.participants.setdefault(role, [])
        if identity not in people:
            people.append(identity)

    def _feedback(self, seq: int, editor: str, text: str) -> None:
        if text:
            self.comments.append(Comment(seq, max(self.round_number, 1), Role.EDITOR, editor, text, True))

    # --- event handlers ------------------------------------------------------

    def _on_case_opened(self, event: ReviewEvent) -> None:
        if self.state is not None:
            raise InvalidState("open_case", self.state.value)
        p = event.payload
        self.state = CaseState.DRAFT
        self._add_participant(Role.AUTHOR, p["author"])
        self._add_participant(Role.SECRETARIAT, p["secretariat"])

    def _on_submitted(self, event: ReviewEvent) -> None:
        self._require_state("submit", CaseState.DRAFT)
        ref = DatasetRef.from_dict(event.payload["dataset_ref"])
        if not ref.download_link or not ref.landing_url:
            raise MissingDatasetRef("dataset reference needs a landing URL and a download link")
        self.dataset_ref = ref
        self.manuscript_meta = dict(event.payload.get("manuscript_meta") or {})
        self.state = CaseState.SUBMITTED

    def _on_checkpoint_sealed(self, event: ReviewEvent) -> None:
        p = event.payload
        record = HashRecord.from_dict(p["record"])
        kind = record.checkpoint.kind
        self._require_state(f"seal {kind.value}", SEAL_FROM[kind])
        if record.key in self.records:
            raise WorkflowError(f"{record.key} is already sealed")
        if record.checkpoint != self.next_checkpoint(kind):
            raise WorkflowError(f"{record.key} is out of order")
        consumed = p.get("consumed_revision")
        if consumed is not None and not (0 <= consumed < len(self.revisions)
                                         and self.revisions[consumed].effective):
            raise WorkflowError(f"revision {consumed} cannot cover {record.key}")

        previous_baseline = self.baseline_key
        self.records[record.key] = record
        if consumed is not None:
            self.revisions[consumed] = replace(
                self.revisions[consumed], covers_from=previous_baseline, covers_to=record.key
            )
        if p.get("baseline"):
            self.baseline_key = record.key
        if p.get("advance"):
            self.state = SEAL_TO[kind]
            if kind is CheckpointKind.CP_ACCEPTANCE:
                self.acceptance_key = record.key

    def _on_finding_raised(self, event: ReviewEvent) -> None:
        p = event.payload
        finding = ManipulationFinding.from_dict(p["finding"])
        if not finding.finding_id or self.finding(finding.finding_id) is not None:
            raise WorkflowError(f"Finding id {finding.finding_id!r} is missing or reused")
        suspend = bool(p.get("suspend"))
        if suspend and (self.state in TERMINAL_STATES or self.state is None):
            raise InvalidState("suspend", self.state.value if self.state else "None")

        self.findings.append(finding)
        self.notifications.extend(Notification.from_dict(n) for n in p.get("notifications", []))
        if suspend and self.state is not CaseState.SUSPENDED:
            self.suspended_from = self.state
            self.state = CaseState.SUSPENDED

    def _on_finding_resolved(self, event: ReviewEvent) -> None:
        p = event.payload
        resolved = ManipulationFinding.from_dict(p["finding"])
        current = self.finding(resolved.finding_id)
        if current is None or not current.is_open:
            raise WorkflowError(f"Finding {resolved.finding_id} is not open")
        self._require_editor(event.actor)
        rebaseline_key = None
        if p.get("rebaseline"):
            rebaseline_key = next(
                (ref.split(":", 1)[1] for ref in current.evidence
                 if ref.startswith("record:") and ref.split(":", 1)[1] in self.records),
                None,
            )
            if rebaseline_key is None:
                raise WorkflowError(f"Finding {resolved.finding_id} has no sealed record to adopt")

        self.findings = [resolved if f.finding_id == resolved.finding_id else f for f in self.findings]
        if rebaseline_key:
            self.baseline_key = rebaseline_key
        blocking = any(f.is_open and f.suspends for f in self.findings)
        if p.get("resume") and self.state is CaseState.SUSPENDED and not blocking:
            self.state = self.suspended_from
            self.suspended_from = None

    def _on_finding_escalated(self, event: ReviewEvent) -> None:
        finding_id = event.payload["finding_id"]
        current = self.finding(finding_id)
        if current is None or not current.is_open:
            raise WorkflowError(f"Finding {finding_id} is not open")
        self._require_editor(event.actor)
        escalated = ManipulationFinding.from_dict({**current.to_dict(), "disposition": "Escalated"})
        self.findings = [escalated if f.finding_id == finding_id else f for f in self.findings]

    def _on_editor_assigned(self, event: ReviewEvent) -> None:
        self._require_state("assign_editor", CaseState.SEALED_SUBMISSION)
        if event.actor not in self.people(Role.SECRETARIAT):
            raise NotParticipant(f"{event.actor!r} is not the secretariat of case {self.case_id}")
        self._add_participant(Role.EDITOR, event.payload["editor"])
        self.state = CaseState.EDITOR_ASSIGNED

    def _on_referee_assigned(self, event: ReviewEvent) -> None:
        self._require_state("assign_referee", CaseState.SEALED_SUBMISSION,
                            CaseState.EDITOR_ASSIGNED, CaseState.UNDER_REVIEW)
        p = event.payload
        if self.people(Role.EDITOR):
            self._require_editor(event.actor)
        else:
            self._add_participant(Role.EDITOR, event.actor)
        self._add_participant(Role.REFEREE, p["referee"])
        if p.get("affiliation"):
            self.affiliations[p["referee"]] = p["affiliation"]
        self.consent.setdefault(p["referee"], False)
        if p.get("conflict_note"):
            self.audit_entries.append(
                AuditEntry(event.seq, "referee-nomination", event.actor, f"{p['referee']}: {p['conflict_note']}")
            )
        if self.round_number == 0:
            self.round_number = 1
        self.state = CaseState.UNDER_REVIEW

    def _on_comment_recorded(self, event: ReviewEvent) -> None:
        self._require_state("record_comment", CaseState.UNDER_REVIEW, CaseState.REVISION_REQUESTED)
        p = event.payload
        self._require_referee(event.actor)
        consent = bool(p["identity_consent"])
        self.comments.append(Comment(event.seq, max(self.round_number, 1), Role.REFEREE,
                                     event.actor, p["text"], consent))
        self.consent[event.actor] = consent

    def _on_consent_changed(self, event: ReviewEvent) -> None:
        if self.state in TERMINAL_STATES or self.state is None:
            raise InvalidState("set_identity_consent", self.state.value if self.state else "None")
        self._require_referee(event.actor)
        self.consent[event.actor] = bool(event.payload["identity_consent"])

    def _on_revision_requested(self, event: ReviewEvent) -> None:
        self._require_state("request_revision", CaseState.UNDER_REVIEW)
        self._require_editor(event.actor)
        self._feedback(event.seq, event.actor, event.payload.get("note", ""))
        self.round_number = max(self.round_number, 1) + 1
        self.state = CaseState.REVISION_REQUESTED

    def _on_data_revision_declared(self, event: ReviewEvent) -> None:
        self._require_state("declare_data_revision", CaseState.REVISION_REQUESTED)
        self._require_author(event.actor)
        p = event.payload
        self.revisions.append(DataRevision(
            declared_by=event.actor,
            note=p["note"],
            declared_at=event.at,
            new_download_link=p.get("new_download_link"),
        ))

    def _on_data_revision_approved(self, event: ReviewEvent) -> None:
        self._require_state("approve_data_revision", *APPROVAL_STATES)
        self._require_editor(event.actor)
        index = self.pending_revision_index()
        if index is None:
            raise NoPendingRevision(f"No declared data revision awaits approval in {self.case_id}")
        revision = self.revisions[index]
        if revision.new_download_link and self.dataset_ref is not None:
            self.dataset_ref = replace(self.dataset_ref, download_link=revision.new_download_link,
                                       version_label=None)
        self.revisions[index] = replace(revision, approved_by=event.actor, approved_at=event.at)

    def _on_revision_submitted(self, event: ReviewEvent) -> None:
        self._require_state("submit_revision", CaseState.REVISION_REQUESTED)
        self._require_author(event.actor)
        self.state = CaseState.REVISED

    def _on_review_returned(self, event: ReviewEvent) -> None:
        self._require_state("return_to_review", CaseState.SEALED_REVISION)
        self._require_editor(event.actor)
        self.state = CaseState.UNDER_REVIEW

    def _on_review_completed(self, event: ReviewEvent) -> None:
        self._require_state("complete_review", CaseState.UNDER_REVIEW, CaseState.SEALED_REVISION)
        self._require_editor(event.actor)
        self.state = CaseState.DECISION_PENDING

    def _on_decided(self, event: ReviewEvent) -> None:
        self._require_state("decide", CaseState.DECISION_PENDING)
        self._require_editor(event.actor)
        decision = Decision(event.payload["decision"])
        self._feedback(event.seq, event.actor, event.payload.get("note", ""))
        self.decision = decision
        self.state = CaseState.ACCEPTED if decision is Decision.ACCEPT else CaseState.REJECTED

    def _on_published(self, event: ReviewEvent) -> None:
        self._require_state("publish", CaseState.SEALED_ACCEPTANCE)
        if self.acceptance_record is None:
            raise WorkflowError("no acceptance record to publish")
        self.published_at = event.payload["published_at"]
        self.report_digest = event.payload["report_digest"]
        self.state = CaseState.PUBLISHED

    # --- snapshot ------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "state": self.state.value if self.state else None,
            "dataset_ref": self.dataset_ref.to_dict() if self.dataset_ref else None,
            "manuscript_meta": self.manuscript_meta,
            "participants": {role.value: list(people) for role, people in self.participants.items()},
            "records": {key: rec.to_dict() for key, rec in sorted(self.records.items())},
            "revisions": [rev.to_dict() for rev in self.revisions],
            "findings": [f.to_dict() for f in self.findings],
            "comments": [c.to_dict() for c in self.comments],
            "consent": dict(self.consent),
            "affiliations": dict(self.affiliations),
            "audit_entries": [a.to_dict() for a in self.audit_entries],
            "notifications": [n.to_dict() for n in self.notifications],
            "state_trail": [s.value for s in self.state_trail],
            "baseline_key": self.baseline_key,
            "acceptance_key": self.acceptance_key,
            "suspended_from": self.suspended_from.value if self.suspended_from else None,
            "decision": self.decision.value if self.decision else None,
            "round_number": self.round_number,
            "published_at": self.published_at,
            "report_digest": self.report_digest,
            "last_seq": self.last_seq,
            "last_digest": self.last_digest,
        }


_HANDLERS: dict[str, Callable[[ReviewCase, ReviewEvent], None]] = {
    "case_opened": ReviewCase._on_case_opened,
    "submitted": ReviewCase._on_submitted,
    "checkpoint_sealed": ReviewCase._on_checkpoint_sealed,
    "finding_raised": ReviewCase._on_finding_raised,
    "finding_resolved": ReviewCase._on_finding_resolved,
    "finding_escalated": ReviewCase._on_finding_escalated,
    "editor_assigned": ReviewCase._on_editor_assigned,
    "referee_assigned": ReviewCase._on_referee_assigned,
    "comment_recorded": ReviewCase._on_comment_recorded,
    "consent_changed": ReviewCase._on_consent_changed,
    "revision_requested": ReviewCase._on_revision_requested,
    "data_revision_declared": ReviewCase._on_data_revision_declared,
    "data_revision_approved": ReviewCase._on_data_revision_approved,
    "revision_submitted": ReviewCase._on_revision_submitted,
    "review_returned": ReviewCase._on_review_returned,
    "review_completed": ReviewCase._on_review_completed,
    "decided": ReviewCase._on_decided,
    "published": ReviewCase._on_published,
}

EVENT_TYPES = frozenset(_HANDLERS)
