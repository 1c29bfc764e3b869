import json
import random

import pytest

from helpers import AUTHOR, CHANGED_FILES, EDITOR, REFEREE, change_one_byte, random_files
from src.errors import InvalidState, SchemaInvalid
from src.integrity.fixity import digest_bytes
from src.review.detection import Verdict
from src.review.engine import replay
from src.review.models import CaseState, CheckpointKind
from src.review.report import (
    VerificationMode,
    VerificationVerdict,
    generate_report,
    parse_report,
    report_filename,
    serialize_report,
    verify_against_report,
    write_report,
)


def _published(driver):
    captured = []
    case = driver.to_state(CaseState.SEALED_ACCEPTANCE)
    driver.engine.publish(case, report_sink=lambda report, data: captured.append((report, data)))
    return case, captured[0]


def test_report_is_deterministic_and_matches_logged_digest(driver_for):
    driver = driver_for()
    case, (report, data) = _published(driver)
    assert case.report_digest == digest_bytes(data).hex
    assert serialize_report(generate_report(case)) == data
    assert serialize_report(generate_report(replay(driver.engine.log_of(case)))) == data
    assert data.endswith(b"\n")
    assert json.loads(data)["published_at"] == case.published_at


def test_report_data_section_is_the_acceptance_record(driver_for):
    driver = driver_for()
    case, (report, _) = _published(driver)
    record = case.acceptance_record
    assert report.data_section.permanent_link == case.dataset_ref.download_link
    assert report.data_section.raw_digest == record.raw_digest.hex
    assert report.data_section.content_manifest.manifest_digest == record.content_manifest.manifest_digest.hex
    assert report.data_section.algorithm == "SHA-256"


def test_referee_identity_needs_consent(driver_for):
    driver = driver_for()
    engine = driver.engine
    case = driver.to_state(CaseState.UNDER_REVIEW)
    engine.assign_referee(case, EDITOR, "referee-2", affiliation="Hydrology Dept")
    engine.record_comment(case, "referee-2", "Station metadata looks fine.", identity_consent=False)
    case, (report, _) = _published(driver)

    referee_comments = [c for r in report.rounds for c in r.comments if c.author_role == "Referee"]
    assert [c.text for c in referee_comments] == ["Units of tmax are missing.", "Station metadata looks fine."]
    assert referee_comments[0].identity.name == REFEREE
    assert referee_comments[0].identity.affiliation == "Climate Lab"
    assert referee_comments[1].identity is None
    assert b"referee-2" not in serialize_report(report)


def test_consent_withdrawn_before_publication_hides_identity(driver_for):
    driver = driver_for()
    case = driver.to_state(CaseState.DECISION_PENDING)
    driver.engine.set_identity_consent(case, REFEREE, False)
    _, (report, _) = _published(driver)
    assert all(c.identity is None for r in report.rounds for c in r.comments if c.author_role == "Referee")


def test_editor_feedback_is_published_by_round(driver_for):
    driver = driver_for()
    _, (report, _) = _published(driver)
    by_round = {r.round_number: [(c.author_role, c.text) for c in r.comments] for r in report.rounds}
    assert by_round[1] == [("Referee", "Units of tmax are missing."), ("Editor", "Please state units.")]
    assert by_round[2] == [("Editor", "Accepted.")]
    assert report.editor_name == EDITOR


def test_resolved_findings_go_to_the_annex(driver_for):
    driver = driver_for("Mutable")
    engine = driver.engine
    case = driver.to_state(CaseState.REVISION_REQUESTED)
    driver.admin.admin_replace("ds-1", CHANGED_FILES)
    engine.submit_revision(case, AUTHOR)
    engine.seal_checkpoint(case, CheckpointKind.CP_REVISION, driver.connector)
    engine.resolve_finding(case, EDITOR, "F-1", "late correction", Verdict.NEGLIGENT, resume=True, rebaseline=True)
    _, (report, _) = _published(driver)
    (entry,) = report.incident_annex
    assert entry.category == "UnauthorizedChangeDuringReview"
    assert entry.verdict == "Negligent"
    assert entry.flow_ref == "2-13" and entry.table_row


def test_report_before_acceptance_seal_is_refused(driver_for):
    driver = driver_for()
    case = driver.to_state(CaseState.ACCEPTED)
    with pytest.raises(InvalidState):
        generate_report(case)


def test_preview_uses_acceptance_seal_time(driver_for):
    driver = driver_for()
    case = driver.to_state(CaseState.SEALED_ACCEPTANCE)
    assert generate_report(case).published_at == case.acceptance_record.sealed_at


def test_write_and_parse_report(driver_for, tmp_path):
    driver = driver_for()
    _, (report, data) = _published(driver)
    path = write_report(report, str(tmp_path))
    assert path.endswith(report_filename(report.case_id))
    with open(path, "rb") as f:
        raw = f.read()
    assert raw == data
    assert parse_report(raw) == report


@pytest.mark.parametrize("mutate,pointer", [
    (lambda d: d["data_section"].update(raw_digest="XYZ"), "/data_section/raw_digest"),
    (lambda d: d.pop("case_id"), "/case_id"),
    (lambda d: d.update(unexpected=1), "/unexpected"),
    (lambda d: d["data_section"]["content_manifest"].update(manifest_digest="0" * 64),
     "/data_section/content_manifest/manifest_digest"),
    (lambda d: d.update(published_at="yesterday"), "/published_at"),
])
def test_schema_errors_point_at_the_field(driver_for, mutate, pointer):
    driver = driver_for()
    _, (_, data) = _published(driver)
    obj = json.loads(data)
    mutate(obj)
    with pytest.raises(SchemaInvalid) as info:
        parse_report(json.dumps(obj).encode("utf-8"))
    assert info.value.path == pointer


def test_unparseable_report():
    with pytest.raises(SchemaInvalid) as info:
        parse_report(b"\xff not json")
    assert info.value.path == "/"


# --- verification -----------------------------------------------------------------


def test_verify_faithful_repository(driver_for):
    driver = driver_for()
    _, (_, data) = _published(driver)
    outcome = verify_against_report(data, driver.connector)
    assert outcome.verdict is VerificationVerdict.VERIFIED


def test_verify_recompressing_repository(driver_for):
    driver = driver_for("TimestampZip")
    _, (report, _) = _published(driver)
    strict = verify_against_report(report, driver.connector, VerificationMode.STRICT)
    content = verify_against_report(report, driver.connector, VerificationMode.CONTENT_NORMALIZED)
    assert strict.verdict is VerificationVerdict.MISMATCH
    assert content.verdict is VerificationVerdict.VERIFIED_CONTENT_ONLY


def test_verify_after_silent_replacement(driver_for):
    driver = driver_for("Mutable")
    _, (report, _) = _published(driver)
    driver.admin.admin_replace("ds-1", CHANGED_FILES)
    outcome = verify_against_report(report, driver.connector, VerificationMode.CONTENT_NORMALIZED)
    assert outcome.verdict is VerificationVerdict.MISMATCH
    assert outcome.details["category"] == "PostAcceptanceChange"


def test_verify_withdrawn_data(driver_for):
    driver = driver_for()
    _, (report, _) = _published(driver)
    driver.admin.admin_withdraw("ds-1")
    outcome = verify_against_report(report, driver.connector)
    assert outcome.verdict is VerificationVerdict.INACCESSIBLE
    assert outcome.details["error"].startswith("NotFound")


# --- randomized runs -----------------------------------------------------------------


def _comment_at_random(driver, rng, referees, consent, expected):
    referee = rng.choice(referees)
    if rng.random() < 0.2:
        consent[referee] = rng.random() < 0.5
        driver.engine.set_identity_consent(driver.case, referee, consent[referee])
        return
    text = f"comment {len(expected)}: {rng.randrange(10**6)}"
    consent[referee] = rng.random() < 0.5
    driver.engine.record_comment(driver.case, referee, text, identity_consent=consent[referee])
    expected.append((referee, text))


def _reviewed_and_published(driver, rng):
    """Publish a case after a random run of referee comments; returns the report and who wrote what."""
    case = driver.to_state(CaseState.UNDER_REVIEW)
    referees = [REFEREE]
    for k in range(rng.randrange(3)):
        referees.append(f"referee-{k + 2}")
        driver.engine.assign_referee(case, EDITOR, referees[-1], affiliation=f"Lab {k + 2}")
    consent = {REFEREE: True}
    expected = [(REFEREE, "Units of tmax are missing.")]
    for _ in range(rng.randrange(12)):
        _comment_at_random(driver, rng, referees, consent, expected)
    _, (report, data) = _published(driver)
    return report, data, consent, expected


def _check_referee_comments(report, consent, expected):
    published = [c for r in report.rounds for c in r.comments if c.author_role == "Referee"]
    assert [c.text for c in published] == [text for _, text in expected]
    for comment, (referee, _) in zip(published, expected):
        if consent[referee]:
            assert comment.identity.name == referee
        else:
            assert comment.identity is None
    data = serialize_report(report)
    for referee, allowed in consent.items():
        if not allowed:
            assert f'"{referee}"'.encode() not in data


@pytest.mark.slow
def test_every_referee_comment_is_published_with_consent_gating(driver_for):
    rng = random.Random(515)
    for trial in range(300):
        driver = driver_for()
        driver.case_id = f"R-{trial}"
        report, _, consent, expected = _reviewed_and_published(driver, rng)
        _check_referee_comments(report, consent, expected)


@pytest.mark.slow
def test_published_reports_are_reproducible_and_detect_later_changes(driver_for):
    rng = random.Random(1303)
    for trial in range(300):
        behavior = rng.choice(["Faithful", "Mutable"])
        files = random_files(rng)
        driver = driver_for(behavior, files)
        driver.case_id = f"P-{trial}"
        report, data, consent, expected = _reviewed_and_published(driver, rng)
        case = driver.case

        assert case.report_digest == digest_bytes(data).hex
        assert serialize_report(generate_report(case)) == data
        assert serialize_report(generate_report(replay(driver.engine.log_of(case)))) == data
        assert parse_report(data) == report
        _check_referee_comments(report, consent, expected)
        for mode in VerificationMode:
            assert verify_against_report(data, driver.connector, mode).verdict is VerificationVerdict.VERIFIED

        if behavior == "Mutable":
            driver.admin.admin_replace("ds-1", change_one_byte(files, rng))
            for mode in VerificationMode:
                assert verify_against_report(data, driver.connector, mode).verdict is VerificationVerdict.MISMATCH
        else:
            driver.admin.admin_replace("ds-1", change_one_byte(files, rng))
            assert verify_against_report(data, driver.connector).verdict is VerificationVerdict.VERIFIED
            driver.admin.admin_withdraw("ds-1")
            assert verify_against_report(data, driver.connector).verdict is VerificationVerdict.INACCESSIBLE
