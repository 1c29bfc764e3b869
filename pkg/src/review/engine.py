"""
engine.py - Review workflow operations.

Every operation turns into one or more events that go through the case's
single writer: the event is folded into a trial copy of the case, appended
to the log, and only then becomes the case's state. Seal fetches happen
outside the writer lock, so slow downloads for one case do not hold up
another.
"""

from __future__ import annotations

import copy
import threading
from typing import Callable

from config import Settings
from src.errors import (
    ChainBroken,
    FetchFailed,
    InvalidState,
    MissingDatasetRef,
    NoPendingRevision,
    NotFound,
    WorkflowError,
)
from src.integrity.fixity import digest_bytes
from src.integrity.stability import Downloader, content_manifest_of, probe_with_fetches
from src.repository.models import DatasetRef
from src.review import detection
from src.review.case import ReviewCase
from src.review.detection import (
    REVISION_STAGES,
    ClassificationContext,
    FetchStatus,
    FindingCategory,
    ManipulationFinding,
    Notification,
    Verdict,
    route_incident,
)
from src.review.events import EventLog, ReviewEvent, chain_event, verify_chain
from src.review.report import generate_report, serialize_report
from src.review.models import (
    SEAL_FROM,
    CaseState,
    CheckpointKind,
    ComparisonMode,
    ComparisonOutcome,
    DataRevision,
    Decision,
    HashRecord,
    Role,
    compare_records,
)
from src.utils.clock import Clock, SystemClock, isoformat
from src.utils.logger import get_logger

logger = get_logger("workflow")

NotificationSink = Callable[[str, ManipulationFinding, Notification], None]
ReportSink = Callable[[object, bytes], None]

DEFAULT_SECRETARIAT = "secretariat"


def replay(event_log: EventLog | bytes | list[ReviewEvent]) -> ReviewCase:
    """
    Rebuild a case from its log.

    Raises:
        ChainBroken: The log was altered, or an event is not legal where it sits.
        GapInSequence: An event is missing.
    """
    if isinstance(event_log, EventLog):
        events = event_log.events()
    elif isinstance(event_log, (bytes, bytearray)):
        events = verify_chain(bytes(event_log))
    else:
        events = verify_chain(b"".join(e.to_line() for e in event_log))
    if not events:
        raise ChainBroken(1, "log is empty")

    case = ReviewCase(case_id=events[0].case_id)
    for event in events:
        try:
            case.apply(event)
        except (WorkflowError, ValueError, KeyError) as e:
            raise ChainBroken(event.seq, f"event cannot be applied: {e}") from e
    return case


class ReviewEngine:
    """
    Runs review operations against cases and their event logs.

    Args:
        settings (Settings): Probe count and comparison mode.
        clock (Clock, optional): Source of event timestamps.
        notification_sink (callable, optional): Receives every routed
            notification as ``(case_id, finding, notification)``.
    """

    def __init__(
        self,
        settings: Settings | None = None,
        clock: Clock | None = None,
        notification_sink: NotificationSink | None = None,
        secretariat: str = DEFAULT_SECRETARIAT,
    ):
        self.settings = settings or Settings()
        self.clock = clock or SystemClock()
        self.notification_sink = notification_sink
        self.secretariat = secretariat
        self._logs: dict[str, EventLog] = {}
        self._last_events: dict[str, ReviewEvent | None] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()

    # --- plumbing ------------------------------------------------------------

    def _lock(self, case_id: str) -> threading.RLock:
        with self._registry_lock:
            return self._locks.setdefault(case_id, threading.RLock())

    def attach(self, case: ReviewCase, log: EventLog) -> None:
        """Bind a replayed case to the log it came from."""
        events = log.events()
        with self._lock(case.case_id):
            self._logs[case.case_id] = log
            self._last_events[case.case_id] = events[-1] if events else None

    def log_of(self, case: ReviewCase) -> EventLog:
        return self._logs[case.case_id]

    def _emit(self, case: ReviewCase, actor_role: Role, actor: str, event_type: str, payload: dict) -> ReviewEvent:
        with self._lock(case.case_id):
            log = self._logs.get(case.case_id)
            if log is None:
                raise KeyError(f"Case {case.case_id} is not attached to an event log")
            event = chain_event(self._last_events.get(case.case_id), case.case_id, actor_role, actor,
                                event_type, payload, isoformat(self.clock.now()))
            trial = copy.deepcopy(case)
            trial.apply(event)
            log.append(event)
            case.__dict__.update(trial.__dict__)
            self._last_events[case.case_id] = event
        logger.debug(f"{case.case_id} #{event.seq} {event_type} by {actor} -> {case.state.value}")
        return event

    def _raise_finding(self, case: ReviewCase, finding: ManipulationFinding, suspend: bool) -> ManipulationFinding:
        # the id is taken from the case under the same lock that appends the event
        with self._lock(case.case_id):
            finding_id = f"F-{len(case.findings) + 1}"
            finding = ManipulationFinding.from_dict({
                **finding.to_dict(),
                "finding_id": finding_id,
                "raised_at": isoformat(self.clock.now()),
            })
            notifications = route_incident(finding)
            if finding.raised_by == "engine":
                role, actor = Role.SECRETARIAT, self.secretariat
            else:
                role, actor = self._role_of(case, finding.raised_by), finding.raised_by
            self._emit(case, role, actor, "finding_raised", {
                "finding": finding.to_dict(),
                "notifications": [n.to_dict() for n in notifications],
                "suspend": suspend,
            })
        level = "warning" if suspend or finding.category is FindingCategory.CONTAINER_NONDETERMINISM_ADVISORY else "info"
        getattr(logger, level)(
            f"{case.case_id}: {finding_id} {finding.category.value} "
            f"(notify {', '.join(n.recipient_role.value for n in notifications)})"
        )
        if self.notification_sink:
            for n in notifications:
                self.notification_sink(case.case_id, finding, n)
        return case.finding(finding_id)

    @staticmethod
    def _role_of(case: ReviewCase, identity: str) -> Role:
        for role, people in case.participants.items():
            if identity in people:
                return role
        return Role.SECRETARIAT

    # --- case lifecycle ------------------------------------------------------

    def open_case(self, case_id: str, author: str, log: EventLog | None = None) -> ReviewCase:
        """Create a Draft case with its genesis event."""
        case = ReviewCase(case_id=case_id)
        with self._lock(case_id):
            self._logs[case_id] = log or EventLog()
            self._last_events[case_id] = None
        self._emit(case, Role.AUTHOR, author, "case_opened", {"author": author, "secretariat": self.secretariat})
        logger.info(f"Opened case {case_id} for {author}")
        return case

    def submit(self, case: ReviewCase, manuscript_meta: dict, dataset_ref: DatasetRef) -> CaseState:
        if case.state is not CaseState.DRAFT:
            raise InvalidState("submit", case.state.value, (CaseState.DRAFT.value,))
        if dataset_ref is None or not dataset_ref.download_link or not dataset_ref.landing_url:
            raise MissingDatasetRef("The manuscript must reference the data's landing page and download link")
        self._emit(case, Role.AUTHOR, case.author, "submitted", {
            "manuscript_meta": dict(manuscript_meta or {}),
            "dataset_ref": dataset_ref.to_dict(),
        })
        logger.info(f"{case.case_id} submitted with data at {dataset_ref.download_link}")
        return case.state

    # --- seals ---------------------------------------------------------------

    def seal_checkpoint(
        self,
        case: ReviewCase,
        kind: CheckpointKind | str,
        connector: Downloader,
        probe_n: int | None = None,
    ) -> HashRecord:
        """
        Fetch the dataset, record its identity and compare it with the baseline.

        Raises:
            InvalidState: The case is not at this checkpoint.
            FetchFailed: After recording a data loss finding.
        """
        kind = CheckpointKind(kind)
        expected = SEAL_FROM[kind]
        if case.state is not expected:
            raise InvalidState(f"seal {kind.value}", case.state.value, (expected.value,))
        probe_n = probe_n or self.settings.probe_count
        link = case.dataset_ref.download_link

        try:
            stability, fetches = probe_with_fetches(connector, link, probe_n)
        except FetchFailed as e:
            status = FetchStatus.NOT_FOUND if isinstance(e, NotFound) else FetchStatus.UNREACHABLE
            finding = detection.classify(ClassificationContext(
                stage=kind,
                fetch_status=status,
                baseline_present=case.baseline is not None,
                evidence=(f"link:{link}", f"error:{e.kind}", f"attempt:{e.attempt or 1}"),
            ))
            logger.error(f"{case.case_id}: {kind.value} fetch failed ({e.kind}); raising {finding.category.value}")
            self._raise_finding(case, finding, suspend=case.state is not CaseState.PUBLISHED)
            raise

        checkpoint = case.next_checkpoint(kind)
        manifest = stability.content_manifests[0] if stability.content_manifests else content_manifest_of(fetches[0].content)[0]
        record = HashRecord(
            checkpoint=checkpoint,
            raw_digest=stability.raw_digests[0],
            content_manifest=manifest,
            stability=stability,
            source_link=link,
            sealed_at=isoformat(self.clock.now()),
            sealed_by=self.secretariat,
        )

        context, compared_to = self._seal_context(case, record)
        finding = detection.classify(context)
        category = finding.category if finding else None

        advance = category in (None, FindingCategory.CONTAINER_NONDETERMINISM_ADVISORY)
        if kind is CheckpointKind.CP_POSTPUB:
            advance = True
        consumed = None
        if (advance and kind in REVISION_STAGES and context.content_outcome is ComparisonOutcome.MISMATCH):
            consumed = case.approved_revision_index()

        self._emit(case, Role.SECRETARIAT, self.secretariat, "checkpoint_sealed", {
            "record": record.to_dict(),
            "advance": advance,
            "baseline": advance and kind is not CheckpointKind.CP_POSTPUB,
            "consumed_revision": consumed,
            "compared_to": compared_to,
        })
        logger.info(
            f"{case.case_id}: sealed {record.key} raw {record.raw_digest.hex[:12]} "
            f"content {record.content_manifest.manifest_digest.hex[:12]} ({stability.verdict.value})"
        )
        if finding is not None:
            self._raise_finding(case, finding, suspend=finding.suspends and kind is not CheckpointKind.CP_POSTPUB)
        return record

    def _seal_context(self, case: ReviewCase, record: HashRecord) -> tuple[ClassificationContext, str | None]:
        kind = record.checkpoint.kind
        evidence = [f"record:{record.key}"]
        if kind is CheckpointKind.CP_SUBMISSION:
            return ClassificationContext(stage=kind, stability=record.stability.verdict,
                                         evidence=tuple(evidence)), None

        reference = case.acceptance_record if kind is CheckpointKind.CP_POSTPUB else case.baseline
        if reference is None:
            return ClassificationContext(stage=kind, stability=record.stability.verdict,
                                         baseline_present=False, evidence=tuple(evidence)), None

        evidence.append(f"baseline:{reference.key}")
        raw = compare_records(record, reference, ComparisonMode.RAW)
        content = compare_records(record, reference, self.settings.comparison_mode)

        declared = approved = False
        if kind in REVISION_STAGES:
            declared = case.revision_declared
            approved = case.approved_revision_index() is not None
            if approved:
                evidence.append(f"revision:{case.approved_revision_index()}")
        return ClassificationContext(
            stage=kind,
            raw_outcome=raw,
            content_outcome=content,
            stability=record.stability.verdict,
            revision_declared=declared,
            revision_approved=approved,
            evidence=tuple(evidence),
        ), reference.key

    def accept_and_seal(self, case: ReviewCase, connector: Downloader) -> CaseState:
        """Seal the accepted data; ends in SealedAcceptance or Suspended."""
        self.seal_checkpoint(case, CheckpointKind.CP_ACCEPTANCE, connector)
        return case.state

    def audit_published(self, case: ReviewCase, connector: Downloader) -> HashRecord:
        """Re-seal published data and compare it with the acceptance record."""
        return self.seal_checkpoint(case, CheckpointKind.CP_POSTPUB, connector)

    # --- review --------------------------------------------------------------

    def assign_editor(self, case: ReviewCase, secretariat: str, editor: str) -> CaseState:
        self._emit(case, Role.SECRETARIAT, secretariat, "editor_assigned", {"editor": editor})
        logger.info(f"{case.case_id}: editor {editor} assigned")
        return case.state

    def assign_referee(
        self,
        case: ReviewCase,
        editor: str,
        referee: str,
        conflict_note: str | None = None,
        affiliation: str | None = None,
    ) -> CaseState:
        self._emit(case, Role.EDITOR, editor, "referee_assigned", {
            "referee": referee,
            "affiliation": affiliation,
            "conflict_note": conflict_note,
        })
        logger.info(f"{case.case_id}: referee {referee} assigned by {editor}")
        return case.state

    def record_comment(self, case: ReviewCase, referee: str, text: str, identity_consent: bool) -> ReviewEvent:
        return self._emit(case, Role.REFEREE, referee, "comment_recorded", {
            "text": text,
            "identity_consent": bool(identity_consent),
        })

    def set_identity_consent(self, case: ReviewCase, referee: str, identity_consent: bool) -> None:
        self._emit(case, Role.REFEREE, referee, "consent_changed", {"identity_consent": bool(identity_consent)})

    def request_revision(self, case: ReviewCase, editor: str, note: str = "") -> CaseState:
        self._emit(case, Role.EDITOR, editor, "revision_requested", {"note": note})
        return case.state

    def declare_data_revision(
        self, case: ReviewCase, author: str, note: str, new_download_link: str | None = None
    ) -> DataRevision:
        self._emit(case, Role.AUTHOR, author, "data_revision_declared", {
            "note": note,
            "new_download_link": new_download_link,
        })
        logger.info(f"{case.case_id}: {author} declared a data revision")
        return case.revisions[-1]

    def approve_data_revision(self, case: ReviewCase, editor: str) -> DataRevision:
        index = case.pending_revision_index()
        if index is None:
            raise NoPendingRevision(f"No declared data revision awaits approval in {case.case_id}")
        self._emit(case, Role.EDITOR, editor, "data_revision_approved", {"index": index})
        logger.info(f"{case.case_id}: {editor} approved data revision {index}")
        return case.revisions[index]

    def submit_revision(self, case: ReviewCase, author: str) -> CaseState:
        self._emit(case, Role.AUTHOR, author, "revision_submitted", {})
        return case.state

    def return_to_review(self, case: ReviewCase, editor: str) -> CaseState:
        self._emit(case, Role.EDITOR, editor, "review_returned", {})
        return case.state

    def complete_review(self, case: ReviewCase, editor: str) -> CaseState:
        self._emit(case, Role.EDITOR, editor, "review_completed", {})
        return case.state

    def decide(self, case: ReviewCase, editor: str, decision: Decision | str, note: str = "") -> CaseState:
        decision = Decision(decision)
        self._emit(case, Role.EDITOR, editor, "decided", {"decision": decision.value, "note": note})
        logger.info(f"{case.case_id}: {editor} decided {decision.value}")
        return case.state

    def publish(self, case: ReviewCase, report_sink: ReportSink | None = None):
        """
        Publish the sealed case and emit its review report.

        The report is generated with the publication time recorded in the
        log, so regenerating it later yields the same bytes.
        """
        if case.state is not CaseState.SEALED_ACCEPTANCE:
            raise InvalidState("publish", case.state.value, (CaseState.SEALED_ACCEPTANCE.value,))
        published_at = isoformat(self.clock.now())
        report = generate_report(case, published_at=published_at)
        data = serialize_report(report)
        self._emit(case, Role.SECRETARIAT, self.secretariat, "published", {
            "published_at": published_at,
            "report_digest": digest_bytes(data).hex,
        })
        if report_sink:
            report_sink(report, data)
        logger.info(f"{case.case_id} published at {published_at}")
        return report

    # --- findings ------------------------------------------------------------

    def flag_policy_finding(
        self, case: ReviewCase, category: FindingCategory | str, reporter: str, note: str,
        evidence: tuple[str, ...] = (),
    ) -> ManipulationFinding:
        finding = detection.flag_policy_finding(case, category, reporter, note, evidence)
        return self._raise_finding(case, finding, suspend=False)

    def resolve_finding(
        self,
        case: ReviewCase,
        editor: str,
        finding_id: str,
        resolution_note: str,
        verdict: Verdict | str,
        resume: bool = False,
        rebaseline: bool = False,
    ) -> ManipulationFinding:
        """
        Record an editor's verdict on a finding.

        With ``resume`` a suspended case returns to the state it left once no
        suspending finding is open; with ``rebaseline`` the record the finding
        points at becomes the comparison baseline.
        """
        resolved = detection.resolve_finding(
            case, editor, finding_id, resolution_note, verdict, isoformat(self.clock.now())
        )
        self._emit(case, Role.EDITOR, editor, "finding_resolved", {
            "finding": resolved.to_dict(),
            "resume": resume,
            "rebaseline": rebaseline,
        })
        logger.info(f"{case.case_id}: {finding_id} resolved as {resolved.resolution.verdict.value}; "
                    f"case {case.state.value}")
        return case.finding(finding_id)

    def escalate_finding(self, case: ReviewCase, editor: str, finding_id: str) -> ManipulationFinding:
        detection.require_open_finding(case, editor, finding_id)
        self._emit(case, Role.EDITOR, editor, "finding_escalated", {"finding_id": finding_id})
        return case.finding(finding_id)

