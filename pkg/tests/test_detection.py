import itertools
import threading

import pytest

from helpers import AUTHOR, EDITOR, REFEREE
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
from src.review.detection import (
    POLICY_ONLY,
    TAXONOMY,
    ClassificationContext,
    Disposition,
    FetchStatus,
    FindingCategory,
    ManipulationFinding,
    Measure,
    Verdict,
    classify,
    route_incident,
)
from src.review.engine import replay
from src.review.models import CaseState, CheckpointKind, ComparisonOutcome, Role

C = FindingCategory
MATCH, MISMATCH = ComparisonOutcome.MATCH, ComparisonOutcome.MISMATCH
SUB, REV, ACC, POST = (CheckpointKind.CP_SUBMISSION, CheckpointKind.CP_REVISION,
                       CheckpointKind.CP_ACCEPTANCE, CheckpointKind.CP_POSTPUB)

# category -> (role, review-flow reference, measure)
EXPECTED_TABLE = {
    C.FAKE_DATA_REGISTRATION: (Role.AUTHOR, "Pre-1", Measure.JOURNAL_POLICY),
    C.UNAUTHORIZED_CHANGE_DURING_REVIEW: (Role.AUTHOR, "2-13", Measure.HASH_VALUE),
    C.POST_ACCEPTANCE_CHANGE: (Role.AUTHOR, "14-17", Measure.HASH_VALUE),
    C.DATA_PLAGIARISM: (Role.REFEREE, "9", Measure.JOURNAL_POLICY),
    C.INDUCTIVE_COMMENTS: (Role.REFEREE, "10", Measure.PEER_REVIEW_REPORT),
    C.INAPPROPRIATE_REFEREE_NOMINATION: (Role.EDITOR, "7", Measure.PEER_REVIEW_REPORT),
    C.INAPPROPRIATE_DECISION: (Role.EDITOR, "12", Measure.PEER_REVIEW_REPORT),
    C.DATA_LOSS: (Role.DATA_REPOSITORY, "Mainly after 13", Measure.HASH_VALUE),
    C.DATA_FALSIFICATION: (Role.DATA_REPOSITORY, "Mainly after 13", Measure.HASH_VALUE),
    C.DATA_FABRICATION: (Role.DATA_REPOSITORY, "Pre-1 and after 13", Measure.JOURNAL_POLICY),
    C.PROCEDURAL_ERROR: (Role.SECRETARIAT, "2-17", Measure.SYSTEM_IMPLEMENTATION),
}


def test_taxonomy_rows_match_table():
    table_rows = {c: row for c, row in TAXONOMY.items() if row.table_row}
    assert set(table_rows) == set(EXPECTED_TABLE)
    for category, (role, flow, measure) in EXPECTED_TABLE.items():
        finding = ManipulationFinding(category)
        assert (finding.role, finding.flow_ref, finding.measure) == (role, flow, measure)


def test_advisory_is_outside_the_table():
    row = TAXONOMY[C.CONTAINER_NONDETERMINISM_ADVISORY]
    assert not row.table_row
    assert row.measure is Measure.HASH_VALUE


def test_policy_only_categories():
    assert POLICY_ONLY == {
        C.FAKE_DATA_REGISTRATION, C.DATA_PLAGIARISM, C.INDUCTIVE_COMMENTS,
        C.INAPPROPRIATE_REFEREE_NOMINATION, C.INAPPROPRIATE_DECISION, C.DATA_FABRICATION,
    }


def test_finding_dict_round_trip_derives_row_from_category():
    finding = ManipulationFinding(C.DATA_LOSS, evidence=("link:x",), finding_id="F-1")
    data = finding.to_dict()
    data["role"] = "Author"
    assert ManipulationFinding.from_dict(data) == finding


# --- classification ------------------------------------------------------------


@pytest.mark.parametrize("context,expected", [
    (ClassificationContext(SUB, stability=StabilityVerdict.STABLE), None),
    (ClassificationContext(SUB, stability=StabilityVerdict.CONTAINER_NONDETERMINISM),
     C.CONTAINER_NONDETERMINISM_ADVISORY),
    (ClassificationContext(SUB, stability=StabilityVerdict.CONTENT_DRIFT), C.DATA_FALSIFICATION),
    (ClassificationContext(SUB, fetch_status=FetchStatus.NOT_FOUND), C.DATA_LOSS),
    (ClassificationContext(REV, raw_outcome=MATCH, content_outcome=MATCH,
                           stability=StabilityVerdict.STABLE), None),
    (ClassificationContext(REV, raw_outcome=MISMATCH, content_outcome=MISMATCH,
                           stability=StabilityVerdict.STABLE), C.UNAUTHORIZED_CHANGE_DURING_REVIEW),
    (ClassificationContext(REV, raw_outcome=MISMATCH, content_outcome=MISMATCH, revision_declared=True,
                           stability=StabilityVerdict.STABLE), C.UNAUTHORIZED_CHANGE_DURING_REVIEW),
    (ClassificationContext(REV, raw_outcome=MISMATCH, content_outcome=MISMATCH, revision_declared=True,
                           revision_approved=True, stability=StabilityVerdict.STABLE), None),
    (ClassificationContext(ACC, raw_outcome=MISMATCH, content_outcome=MATCH,
                           stability=StabilityVerdict.CONTAINER_NONDETERMINISM),
     C.CONTAINER_NONDETERMINISM_ADVISORY),
    (ClassificationContext(ACC, raw_outcome=MISMATCH, content_outcome=MATCH,
                           stability=StabilityVerdict.STABLE), C.CONTAINER_NONDETERMINISM_ADVISORY),
    (ClassificationContext(ACC, baseline_present=False, stability=StabilityVerdict.STABLE), C.PROCEDURAL_ERROR),
    (ClassificationContext(ACC, fetch_status=FetchStatus.UNREACHABLE, baseline_present=False), C.DATA_LOSS),
    (ClassificationContext(POST, raw_outcome=MISMATCH, content_outcome=MISMATCH,
                           stability=StabilityVerdict.STABLE), C.POST_ACCEPTANCE_CHANGE),
    (ClassificationContext(POST, raw_outcome=MISMATCH, content_outcome=MISMATCH,
                           stability=StabilityVerdict.CONTENT_DRIFT), C.DATA_FALSIFICATION),
    (ClassificationContext(POST, fetch_status=FetchStatus.NOT_FOUND), C.DATA_LOSS),
])
def test_classify_examples(context, expected):
    finding = classify(context)
    assert (finding.category if finding else None) == expected


@pytest.mark.parametrize("context", [
    ClassificationContext(REV, revision_approved=True, raw_outcome=MATCH, content_outcome=MATCH),
    ClassificationContext(SUB, raw_outcome=MATCH, content_outcome=MATCH),
    ClassificationContext(POST, revision_declared=True, raw_outcome=MATCH, content_outcome=MATCH),
    ClassificationContext(REV, raw_outcome=MATCH),
    ClassificationContext(REV, raw_outcome=MATCH, content_outcome=MISMATCH),
    ClassificationContext(REV, baseline_present=True),
    ClassificationContext(REV, baseline_present=False, raw_outcome=MATCH, content_outcome=MATCH),
    ClassificationContext(ACC, fetch_status=FetchStatus.NOT_FOUND, stability=StabilityVerdict.STABLE),
])
def test_classify_rejects_contradictory_signals(context):
    with pytest.raises(InconsistentContext):
        classify(context)


def _grid():
    outcomes = [None, MATCH, MISMATCH]
    for stage, fetch, raw, content, stability, declared, approved, baseline in itertools.product(
        CheckpointKind, FetchStatus, outcomes, outcomes, [None, *StabilityVerdict], [False, True], [False, True],
        [False, True],
    ):
        yield ClassificationContext(stage, fetch, raw, content, stability, declared, approved, baseline)


INCONSISTENT = "inconsistent"


def _expected(ctx):
    """Independent decision table for one grid point."""
    outcomes = (ctx.raw_outcome, ctx.content_outcome)
    compared = outcomes != (None, None)
    if ctx.revision_approved and not ctx.revision_declared:
        return INCONSISTENT
    if ctx.revision_declared and ctx.stage not in (REV, ACC):
        return INCONSISTENT
    if ctx.fetch_status is not FetchStatus.OK:
        return INCONSISTENT if compared or ctx.stability is not None else C.DATA_LOSS
    if ctx.stage is SUB:
        if compared:
            return INCONSISTENT
    elif outcomes not in {(None, None), (MATCH, MATCH), (MISMATCH, MATCH), (MISMATCH, MISMATCH)}:
        return INCONSISTENT
    elif compared != ctx.baseline_present:
        return INCONSISTENT

    if ctx.stability is StabilityVerdict.CONTENT_DRIFT:
        return C.DATA_FALSIFICATION
    if ctx.stage is not SUB and not ctx.baseline_present:
        return C.PROCEDURAL_ERROR
    if ctx.content_outcome is MISMATCH:
        return {
            REV: None if ctx.revision_approved else C.UNAUTHORIZED_CHANGE_DURING_REVIEW,
            ACC: None if ctx.revision_approved else C.UNAUTHORIZED_CHANGE_DURING_REVIEW,
            POST: C.POST_ACCEPTANCE_CHANGE,
        }[ctx.stage]
    if ctx.raw_outcome is MISMATCH or ctx.stability is StabilityVerdict.CONTAINER_NONDETERMINISM:
        return C.CONTAINER_NONDETERMINISM_ADVISORY
    return None


def test_classify_matches_decision_table_on_full_grid():
    seen = set()
    for ctx in _grid():
        expected = _expected(ctx)
        if expected == INCONSISTENT:
            with pytest.raises(InconsistentContext):
                classify(ctx)
            continue
        finding = classify(ctx)
        actual = finding.category if finding else None
        assert actual == expected, ctx
        seen.add(actual)
    assert seen == {
        None,
        C.DATA_LOSS,
        C.DATA_FALSIFICATION,
        C.PROCEDURAL_ERROR,
        C.UNAUTHORIZED_CHANGE_DURING_REVIEW,
        C.POST_ACCEPTANCE_CHANGE,
        C.CONTAINER_NONDETERMINISM_ADVISORY,
    }
    assert not seen & set(POLICY_ONLY)


def test_decision_table_inconsistent_points():
    grid = list(_grid())
    inconsistent = [ctx for ctx in grid if _expected(ctx) == INCONSISTENT]
    assert 0 < len(inconsistent) < len(grid)
    # submission seal never compares; a failed fetch carries no signals
    assert all(_expected(ctx) == INCONSISTENT for ctx in grid
               if ctx.stage is SUB and ctx.raw_outcome is not None)
    assert all(_expected(ctx) == INCONSISTENT for ctx in grid
               if ctx.fetch_status is not FetchStatus.OK and ctx.stability is not None)
    assert all(_expected(ctx) == INCONSISTENT for ctx in grid
               if (ctx.raw_outcome, ctx.content_outcome) == (MATCH, MISMATCH))
    assert all(_expected(ctx) == INCONSISTENT for ctx in grid
               if ctx.revision_approved and not ctx.revision_declared)
    assert all(_expected(ctx) == INCONSISTENT for ctx in grid
               if ctx.revision_declared and ctx.stage in (SUB, POST))


# --- routing -------------------------------------------------------------------


@pytest.mark.parametrize("category,expected", [
    (C.DATA_LOSS, [(Role.EDITOR, "integrity-incident"), (Role.DATA_REPOSITORY, "repository-incident")]),
    (C.DATA_FALSIFICATION, [(Role.EDITOR, "integrity-incident"), (Role.DATA_REPOSITORY, "repository-incident")]),
    (C.CONTAINER_NONDETERMINISM_ADVISORY,
     [(Role.EDITOR, "integrity-incident"), (Role.DATA_REPOSITORY, "repository-advisory")]),
    (C.UNAUTHORIZED_CHANGE_DURING_REVIEW, [(Role.EDITOR, "integrity-incident")]),
    (C.POST_ACCEPTANCE_CHANGE, [(Role.EDITOR, "integrity-incident")]),
    (C.PROCEDURAL_ERROR, [(Role.SECRETARIAT, "procedure-review"), (Role.EDITOR, "integrity-incident")]),
    (C.DATA_PLAGIARISM, [(Role.EDITOR, "policy-report")]),
    (C.INAPPROPRIATE_DECISION, [(Role.EDITOR, "policy-report")]),
])
def test_route_incident(category, expected):
    routed = route_incident(ManipulationFinding(category, finding_id="F-1"))
    assert [(n.recipient_role, n.message_kind) for n in routed] == expected
    assert all(n.finding_id == "F-1" and n.category == category.value for n in routed)


def test_route_incident_rejects_resolved_findings():
    with pytest.raises(FindingNotOpen):
        route_incident(ManipulationFinding(C.DATA_LOSS, disposition=Disposition.RESOLVED))


# --- flagging and resolution ---------------------------------------------------------


def test_flag_policy_finding_is_recorded_without_suspension(driver_for):
    driver = driver_for()
    case = driver.to_state(CaseState.UNDER_REVIEW)
    finding = driver.engine.flag_policy_finding(case, "DataPlagiarism", AUTHOR, "referee reused the data")
    assert finding.finding_id == "F-1"
    assert finding.raised_by == AUTHOR
    assert case.state is CaseState.UNDER_REVIEW
    assert [(n.recipient_role, n.message_kind) for n in case.notifications] == [(Role.EDITOR, "policy-report")]


def test_flag_policy_finding_errors(driver_for):
    driver = driver_for()
    case = driver.to_state(CaseState.UNDER_REVIEW)
    seq = case.last_seq
    with pytest.raises(CategoryNotPolicyOnly):
        driver.engine.flag_policy_finding(case, C.UNAUTHORIZED_CHANGE_DURING_REVIEW, AUTHOR, "changed")
    with pytest.raises(UnknownReporter):
        driver.engine.flag_policy_finding(case, C.DATA_PLAGIARISM, "stranger", "copied")
    assert case.last_seq == seq


def test_concurrent_flags_get_distinct_finding_ids(driver_for):
    driver = driver_for()
    case = driver.to_state(CaseState.UNDER_REVIEW)
    reporters = [AUTHOR, REFEREE, EDITOR, AUTHOR, REFEREE, EDITOR, AUTHOR, REFEREE]
    start = threading.Barrier(len(reporters))
    errors = []

    def flag(reporter):
        start.wait()
        try:
            driver.engine.flag_policy_finding(case, C.DATA_PLAGIARISM, reporter, "reused data")
        except Exception as e:  # surfaced below
            errors.append(e)

    threads = [threading.Thread(target=flag, args=(r,)) for r in reporters]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    assert errors == []
    ids = [f.finding_id for f in case.findings]
    assert sorted(ids, key=lambda i: int(i[2:])) == [f"F-{n}" for n in range(1, len(reporters) + 1)]
    assert replay(driver.engine.log_of(case)).to_dict() == case.to_dict()


def test_resolve_finding_errors(driver_for):
    driver = driver_for()
    engine = driver.engine
    case = driver.to_state(CaseState.UNDER_REVIEW)
    engine.flag_policy_finding(case, C.INDUCTIVE_COMMENTS, AUTHOR, "asks to add referee's columns")

    with pytest.raises(NotEditor):
        engine.resolve_finding(case, REFEREE, "F-1", "no", Verdict.UNFOUNDED)
    with pytest.raises(UnknownFinding):
        engine.resolve_finding(case, EDITOR, "F-9", "no", Verdict.UNFOUNDED)

    escalated = engine.escalate_finding(case, EDITOR, "F-1")
    assert escalated.disposition is Disposition.ESCALATED and escalated.is_open

    resolved = engine.resolve_finding(case, EDITOR, "F-1", "comments were fair", Verdict.UNFOUNDED)
    assert resolved.disposition is Disposition.RESOLVED
    assert resolved.resolution.verdict is Verdict.UNFOUNDED
    assert resolved.resolution.resolved_by == EDITOR
    with pytest.raises(AlreadyResolved):
        engine.resolve_finding(case, EDITOR, "F-1", "again", Verdict.NEGLIGENT)
