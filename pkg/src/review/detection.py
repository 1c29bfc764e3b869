"""
detection.py - Integrity finding taxonomy, classification and routing.

Each category carries the role, review-flow reference and measure of its
taxonomy row. Categories whose measure is a hash value or the system
implementation are raised by the engine; the rest are policy matters a
participant has to flag by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from src.errors import (
    AlreadyResolved,
    CategoryNotPolicyOnly,
    FindingNotOpen,
    InconsistentContext,
    NotEditor,
    UnknownFinding,
    UnknownReporter,
)
from src.integrity.stability import StabilityVerdict
from src.review.models import CheckpointKind, ComparisonOutcome, Role
from src.utils.logger import get_logger

logger = get_logger("detection")


class FindingCategory(str, Enum):
    FAKE_DATA_REGISTRATION = "FakeDataRegistration"
    UNAUTHORIZED_CHANGE_DURING_REVIEW = "UnauthorizedChangeDuringReview"
    POST_ACCEPTANCE_CHANGE = "PostAcceptanceChange"
    DATA_PLAGIARISM = "DataPlagiarism"
    INDUCTIVE_COMMENTS = "InductiveComments"
    INAPPROPRIATE_REFEREE_NOMINATION = "InappropriateRefereeNomination"
    INAPPROPRIATE_DECISION = "InappropriateDecision"
    DATA_LOSS = "DataLoss"
    DATA_FALSIFICATION = "DataFalsification"
    DATA_FABRICATION = "DataFabrication"
    PROCEDURAL_ERROR = "ProceduralError"
    CONTAINER_NONDETERMINISM_ADVISORY = "ContainerNondeterminismAdvisory"


class Measure(str, Enum):
    HASH_VALUE = "Hash value"
    JOURNAL_POLICY = "Journal policy"
    PEER_REVIEW_REPORT = "Peer review report"
    SYSTEM_IMPLEMENTATION = "System implementation"


class Disposition(str, Enum):
    OPEN = "Open"
    RESOLVED = "Resolved"
    ESCALATED = "Escalated"


class Verdict(str, Enum):
    MALICIOUS = "Malicious"
    NEGLIGENT = "Negligent"
    TECHNICAL_ISSUE = "TechnicalIssue"
    UNFOUNDED = "Unfounded"


class FetchStatus(str, Enum):
    OK = "Ok"
    NOT_FOUND = "NotFound"
    UNREACHABLE = "Unreachable"


@dataclass(frozen=True)
class TaxonomyRow:
    role: Role
    flow_ref: str
    measure: Measure
    description: str
    table_row: bool = True

    @property
    def detectable(self) -> bool:
        return self.measure in (Measure.HASH_VALUE, Measure.SYSTEM_IMPLEMENTATION)


TAXONOMY: dict[FindingCategory, TaxonomyRow] = {
    FindingCategory.FAKE_DATA_REGISTRATION: TaxonomyRow(
        Role.AUTHOR, "Pre-1", Measure.JOURNAL_POLICY, "Fake data registration"),
    FindingCategory.UNAUTHORIZED_CHANGE_DURING_REVIEW: TaxonomyRow(
        Role.AUTHOR, "2-13", Measure.HASH_VALUE, "Unauthorized data change during the review process"),
    FindingCategory.POST_ACCEPTANCE_CHANGE: TaxonomyRow(
        Role.AUTHOR, "14-17", Measure.HASH_VALUE, "Data change after the acceptance of the paper"),
    FindingCategory.DATA_PLAGIARISM: TaxonomyRow(
        Role.REFEREE, "9", Measure.JOURNAL_POLICY, "Data plagiarism"),
    FindingCategory.INDUCTIVE_COMMENTS: TaxonomyRow(
        Role.REFEREE, "10", Measure.PEER_REVIEW_REPORT, "Comments that induce data edits for the referee's benefit"),
    FindingCategory.INAPPROPRIATE_REFEREE_NOMINATION: TaxonomyRow(
        Role.EDITOR, "7", Measure.PEER_REVIEW_REPORT, "Inappropriate referee nomination"),
    FindingCategory.INAPPROPRIATE_DECISION: TaxonomyRow(
        Role.EDITOR, "12", Measure.PEER_REVIEW_REPORT, "Notification of inappropriate review results"),
    FindingCategory.DATA_LOSS: TaxonomyRow(
        Role.DATA_REPOSITORY, "Mainly after 13", Measure.HASH_VALUE, "Data loss"),
    FindingCategory.DATA_FALSIFICATION: TaxonomyRow(
        Role.DATA_REPOSITORY, "Mainly after 13", Measure.HASH_VALUE, "Data falsification"),
    FindingCategory.DATA_FABRICATION: TaxonomyRow(
        Role.DATA_REPOSITORY, "Pre-1 and after 13", Measure.JOURNAL_POLICY, "Data fabrication"),
    FindingCategory.PROCEDURAL_ERROR: TaxonomyRow(
        Role.SECRETARIAT, "2-17", Measure.SYSTEM_IMPLEMENTATION, "Procedural error"),
    # Outside the taxonomy table: archives re-created on every download
    FindingCategory.CONTAINER_NONDETERMINISM_ADVISORY: TaxonomyRow(
        Role.DATA_REPOSITORY, "4, 4', 14", Measure.HASH_VALUE,
        "Archive re-created on download; content unchanged", table_row=False),
}

POLICY_ONLY = frozenset(c for c, row in TAXONOMY.items() if not row.detectable)

REPOSITORY_SIDE = frozenset({
    FindingCategory.DATA_LOSS,
    FindingCategory.DATA_FALSIFICATION,
    FindingCategory.CONTAINER_NONDETERMINISM_ADVISORY,
})

# Open findings of these categories keep a case suspended
NON_SUSPENDING = frozenset({
    FindingCategory.CONTAINER_NONDETERMINISM_ADVISORY,
    FindingCategory.POST_ACCEPTANCE_CHANGE,
})

COMPARISON_STAGES = (CheckpointKind.CP_REVISION, CheckpointKind.CP_ACCEPTANCE, CheckpointKind.CP_POSTPUB)
REVISION_STAGES = (CheckpointKind.CP_REVISION, CheckpointKind.CP_ACCEPTANCE)


def suspends(category: FindingCategory) -> bool:
    return TAXONOMY[category].detectable and category not in NON_SUSPENDING


@dataclass(frozen=True)
class Resolution:
    verdict: Verdict
    note: str
    resolved_by: str
    resolved_at: str

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "note": self.note,
            "resolved_by": self.resolved_by,
            "resolved_at": self.resolved_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Resolution":
        return cls(Verdict(data["verdict"]), data["note"], data["resolved_by"], data["resolved_at"])


@dataclass(frozen=True)
class ManipulationFinding:
    category: FindingCategory
    evidence: tuple[str, ...] = ()
    finding_id: str = ""
    disposition: Disposition = Disposition.OPEN
    raised_by: str = "engine"
    raised_at: str = ""
    note: str = ""
    resolution: Resolution | None = None

    @property
    def row(self) -> TaxonomyRow:
        return TAXONOMY[self.category]

    @property
    def role(self) -> Role:
        return self.row.role

    @property
    def flow_ref(self) -> str:
        return self.row.flow_ref

    @property
    def measure(self) -> Measure:
        return self.row.measure

    @property
    def detectable(self) -> bool:
        return self.row.detectable

    @property
    def is_open(self) -> bool:
        return self.disposition is not Disposition.RESOLVED

    @property
    def suspends(self) -> bool:
        return suspends(self.category)

    def to_dict(self) -> dict:
        return {
            "finding_id": self.finding_id,
            "category": self.category.value,
            "role": self.role.value,
            "flow_ref": self.flow_ref,
            "measure": self.measure.value,
            "detectable": self.detectable,
            "table_row": self.row.table_row,
            "evidence": list(self.evidence),
            "disposition": self.disposition.value,
            "raised_by": self.raised_by,
            "raised_at": self.raised_at,
            "note": self.note,
            "resolution": self.resolution.to_dict() if self.resolution else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ManipulationFinding":
        # role/flow/measure are derived from the category, never read back
        resolution = data.get("resolution")
        return cls(
            category=FindingCategory(data["category"]),
            evidence=tuple(data.get("evidence", ())),
            finding_id=data.get("finding_id", ""),
            disposition=Disposition(data.get("disposition", Disposition.OPEN.value)),
            raised_by=data.get("raised_by", "engine"),
            raised_at=data.get("raised_at", ""),
            note=data.get("note", ""),
            resolution=Resolution.from_dict(resolution) if resolution else None,
        )


@dataclass(frozen=True)
class ClassificationContext:
    """Signals observed at one seal.

    Comparison outcomes are None when there was nothing to compare against
    (the submission seal) or nothing fetched.
    """

    stage: CheckpointKind
    fetch_status: FetchStatus = FetchStatus.OK
    raw_outcome: ComparisonOutcome | None = None
    content_outcome: ComparisonOutcome | None = None
    stability: StabilityVerdict | None = None
    revision_declared: bool = False
    revision_approved: bool = False
    baseline_present: bool = True
    evidence: tuple[str, ...] = field(default=())


def _check_consistency(ctx: ClassificationContext) -> None:
    stage = CheckpointKind(ctx.stage)
    has_outcomes = ctx.raw_outcome is not None or ctx.content_outcome is not None

    if ctx.revision_approved and not ctx.revision_declared:
        raise InconsistentContext("revision approved without a declaration")
    if (ctx.revision_declared or ctx.revision_approved) and stage not in REVISION_STAGES:
        raise InconsistentContext(f"revision state has no meaning at {stage.value}")
    if ctx.fetch_status is not FetchStatus.OK:
        if has_outcomes or ctx.stability is not None:
            raise InconsistentContext("comparison or stability present for a failed fetch")
        return
    if stage is CheckpointKind.CP_SUBMISSION:
        if has_outcomes:
            raise InconsistentContext("nothing to compare against at the submission seal")
        return
    if (ctx.raw_outcome is None) != (ctx.content_outcome is None):
        raise InconsistentContext("raw and content outcomes must be given together")
    if ctx.baseline_present and not has_outcomes:
        raise InconsistentContext("baseline present but no comparison outcome")
    if not ctx.baseline_present and has_outcomes:
        raise InconsistentContext("comparison outcome without a baseline")
    if ctx.raw_outcome is ComparisonOutcome.MATCH and ctx.content_outcome is ComparisonOutcome.MISMATCH:
        raise InconsistentContext("identical payloads cannot differ in content")


def classify(context: ClassificationContext) -> ManipulationFinding | None:
    """
    Map what a seal observed to at most one finding.

    Priority: failed fetch, drift within the probe, missing baseline, content
    change, container-only change. Content changes at the revision or
    acceptance seal are covered by an approved data revision.

    Raises:
        InconsistentContext: The signals contradict each other.
    """
    _check_consistency(context)
    stage = CheckpointKind(context.stage)

    if context.fetch_status is not FetchStatus.OK:
        category = FindingCategory.DATA_LOSS
    elif context.stability is StabilityVerdict.CONTENT_DRIFT:
        category = FindingCategory.DATA_FALSIFICATION
    elif stage in COMPARISON_STAGES and not context.baseline_present:
        category = FindingCategory.PROCEDURAL_ERROR
    elif context.content_outcome is ComparisonOutcome.MISMATCH:
        if stage is CheckpointKind.CP_POSTPUB:
            category = FindingCategory.POST_ACCEPTANCE_CHANGE
        elif context.revision_approved:
            return None
        else:
            category = FindingCategory.UNAUTHORIZED_CHANGE_DURING_REVIEW
    elif (context.raw_outcome is ComparisonOutcome.MISMATCH
          or context.stability is StabilityVerdict.CONTAINER_NONDETERMINISM):
        category = FindingCategory.CONTAINER_NONDETERMINISM_ADVISORY
    else:
        return None

    logger.debug(f"{stage.value} signals classified as {category.value}")
    return ManipulationFinding(category=category, evidence=tuple(context.evidence))


def flag_policy_finding(
    case,
    category: FindingCategory | str,
    reporter: str,
    note: str,
    evidence: tuple[str, ...] = (),
) -> ManipulationFinding:
    """
    Build a human-flagged finding for a policy-only category.

    Only validates; the workflow engine records it in the case log.

    Raises:
        CategoryNotPolicyOnly: The category is one the engine raises itself.
        UnknownReporter: ``reporter`` is not a participant of the case.
    """
    category = FindingCategory(category)
    if category not in POLICY_ONLY:
        raise CategoryNotPolicyOnly(f"{category.value} is raised by the engine, not flagged")
    if not case.is_participant(reporter):
        raise UnknownReporter(f"{reporter!r} is not a participant of case {case.case_id}")
    return ManipulationFinding(category=category, evidence=tuple(evidence), raised_by=reporter, note=note)


@dataclass(frozen=True)
class Notification:
    recipient_role: Role
    message_kind: str
    finding_id: str = ""
    category: str = ""

    def to_dict(self) -> dict:
        return {
            "recipient_role": self.recipient_role.value,
            "message_kind": self.message_kind,
            "finding_id": self.finding_id,
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Notification":
        return cls(Role(data["recipient_role"]), data["message_kind"],
                   data.get("finding_id", ""), data.get("category", ""))


def route_incident(finding: ManipulationFinding) -> list[Notification]:
    """Who hears about an open finding. Delivery is someone else's job."""
    if not finding.is_open:
        raise FindingNotOpen(f"Finding {finding.finding_id or finding.category.value} is not open")

    def note(role: Role, kind: str) -> Notification:
        return Notification(role, kind, finding.finding_id, finding.category.value)

    if finding.measure is Measure.SYSTEM_IMPLEMENTATION:
        routed = [note(Role.SECRETARIAT, "procedure-review"), note(Role.EDITOR, "integrity-incident")]
    elif finding.measure is Measure.HASH_VALUE:
        routed = [note(Role.EDITOR, "integrity-incident")]
        if finding.category in REPOSITORY_SIDE:
            kind = "repository-advisory" if not finding.suspends else "repository-incident"
            routed.append(note(Role.DATA_REPOSITORY, kind))
    else:
        routed = [note(Role.EDITOR, "policy-report")]
    return routed


def require_open_finding(case, editor: str, finding_id: str) -> ManipulationFinding:
    """
    The open finding an editor wants to act on.

    Raises:
        NotEditor: ``editor`` is not an editor of the case.
        UnknownFinding: No finding has that id.
        AlreadyResolved: The finding was resolved before.
    """
    if editor not in case.participants.get(Role.EDITOR, []):
        raise NotEditor(f"{editor!r} is not an editor of case {case.case_id}")
    finding = case.finding(finding_id)
    if finding is None:
        raise UnknownFinding(f"No finding {finding_id} in case {case.case_id}")
    if not finding.is_open:
        raise AlreadyResolved(f"Finding {finding_id} is already resolved")
    return finding


def resolve_finding(
    case, editor: str, finding_id: str, resolution_note: str, verdict: Verdict | str, at: str = ""
) -> ManipulationFinding:
    """Validate an editor's resolution and return the resolved finding.

    Whether the case leaves suspension is decided by the workflow engine.
    """
    finding = require_open_finding(case, editor, finding_id)
    return replace(
        finding,
        disposition=Disposition.RESOLVED,
        resolution=Resolution(Verdict(verdict), resolution_note, editor, at),
    )
