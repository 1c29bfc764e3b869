"""
report.py - Open peer review report: generation, canonical form, verification.

The report publishes every comment, the editor's feedback, referee identities
where the referee agreed, and the identity of the accepted data: its
permanent link, payload digest and content manifest. End users verify the
repository against it with :func:`verify_against_report`.

Schema (canonical JSON, sorted keys, UTF-8, trailing LF)::

    schema_version   "1.0"
    case_id          string
    manuscript_meta  object of strings
    editor_name      string
    rounds           [{round_number, comments: [{author_role, text, identity}]}]
                     identity is {name, affiliation} or null
    data_section     {permanent_link, raw_digest, content_manifest, algorithm}
    incident_annex   [{finding_id, category, role, flow_ref, measure,
                       table_row, verdict, resolution_note}]
    published_at     "YYYY-MM-DDTHH:MM:SSZ"
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.errors import FetchFailed, InvalidState, MissingAcceptanceRecord, SchemaInvalid
from src.integrity.fixity import ALGORITHM, HashManifest, digest_bytes
from src.integrity.stability import Downloader, content_manifest_of
from src.review.case import ReviewCase
from src.review.models import CaseState, Role
from src.utils.canonical import canonical_bytes
from src.utils.clock import Clock, SystemClock, isoformat
from src.utils.logger import get_logger

logger = get_logger("report")

SCHEMA_VERSION = "1.0"
REPORT_SUFFIX = ".review-report.json"
HEX64 = r"^[0-9a-f]{64}$"
TIMESTAMP = r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Identity(_Strict):
    name: str
    affiliation: str | None = None


class ReportComment(_Strict):
    author_role: Literal["Referee", "Editor"]
    text: str
    identity: Identity | None = None


class ReviewRound(_Strict):
    round_number: int = Field(ge=1)
    comments: list[ReportComment]


class ManifestEntryModel(_Strict):
    path: str
    digest: str = Field(pattern=HEX64)
    size: int = Field(ge=0)


class ContentManifestModel(_Strict):
    entries: list[ManifestEntryModel]
    manifest_digest: str = Field(pattern=HEX64)

    @field_validator("manifest_digest")
    @classmethod
    def _consistent(cls, value, info):
        entries = info.data.get("entries")
        if entries is not None:
            try:
                HashManifest.from_dict({"entries": [e.model_dump() for e in entries], "manifest_digest": value})
            except ValueError as e:
                raise ValueError(f"manifest does not match its entries: {e}") from e
        return value


class DataSection(_Strict):
    permanent_link: str = Field(min_length=1)
    raw_digest: str = Field(pattern=HEX64)
    content_manifest: ContentManifestModel
    algorithm: Literal["SHA-256"] = ALGORITHM


class IncidentSummary(_Strict):
    finding_id: str
    category: str
    role: str
    flow_ref: str
    measure: str
    table_row: bool
    verdict: str
    resolution_note: str


class PeerReviewReport(_Strict):
    schema_version: Literal["1.0"] = SCHEMA_VERSION
    case_id: str = Field(min_length=1)
    manuscript_meta: dict[str, str]
    editor_name: str
    rounds: list[ReviewRound]
    data_section: DataSection
    incident_annex: list[IncidentSummary]
    published_at: str = Field(pattern=TIMESTAMP)


def _identity(case: ReviewCase, referee: str) -> Identity | None:
    if not case.consent.get(referee, False):
        return None
    return Identity(name=referee, affiliation=case.affiliations.get(referee))


def generate_report(case: ReviewCase, published_at: str | None = None) -> PeerReviewReport:
    """
    Build the review report of a sealed or published case.

    The publication time comes from the case once published; before that it
    defaults to the acceptance seal time so previews are deterministic too.

    Raises:
        InvalidState: The case is not SealedAcceptance or Published.
        MissingAcceptanceRecord: No acceptance seal to publish.
    """
    if case.state not in (CaseState.SEALED_ACCEPTANCE, CaseState.PUBLISHED):
        raise InvalidState("generate_report", case.state.value if case.state else "None",
                           (CaseState.SEALED_ACCEPTANCE.value, CaseState.PUBLISHED.value))
    record = case.acceptance_record
    if record is None:
        raise MissingAcceptanceRecord(f"Case {case.case_id} has no CP_ACCEPTANCE record")

    rounds: dict[int, list[ReportComment]] = {}
    for c in sorted(case.comments, key=lambda c: c.seq):
        if c.author_role is Role.EDITOR:
            identity = Identity(name=c.author)
        else:
            identity = _identity(case, c.author)
        rounds.setdefault(c.round_number, []).append(
            ReportComment(author_role=c.author_role.value, text=c.text, identity=identity)
        )

    annex = [
        IncidentSummary(
            finding_id=f.finding_id,
            category=f.category.value,
            role=f.role.value,
            flow_ref=f.flow_ref,
            measure=f.measure.value,
            table_row=f.row.table_row,
            verdict=f.resolution.verdict.value,
            resolution_note=f.resolution.note,
        )
        for f in case.findings
        if not f.is_open and f.resolution is not None
    ]

    return PeerReviewReport(
        case_id=case.case_id,
        manuscript_meta={str(k): str(v) for k, v in case.manuscript_meta.items()},
        editor_name=case.editor or "",
        rounds=[ReviewRound(round_number=n, comments=rounds[n]) for n in sorted(rounds)],
        data_section=DataSection(
            permanent_link=record.source_link,
            raw_digest=record.raw_digest.hex,
            content_manifest=ContentManifestModel.model_validate(record.content_manifest.to_dict()),
            algorithm=record.algorithm,
        ),
        incident_annex=annex,
        published_at=published_at or case.published_at or record.sealed_at,
    )


def serialize_report(report: PeerReviewReport) -> bytes:
    return canonical_bytes(report.model_dump(mode="json")) + b"\n"


def _pointer(loc: tuple) -> str:
    return "/" + "/".join(str(part) for part in loc) if loc else "/"


def parse_report(data: bytes | str) -> PeerReviewReport:
    """
    Parse and validate a report.

    Raises:
        SchemaInvalid: With a JSON pointer to the first offending field.
    """
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        obj = json.loads(text)
    except (UnicodeDecodeError, ValueError) as e:
        raise SchemaInvalid("/", f"not UTF-8 JSON: {e}") from e
    if not isinstance(obj, dict):
        raise SchemaInvalid("/", "report must be a JSON object")
    try:
        return PeerReviewReport.model_validate(obj)
    except ValidationError as e:
        first = e.errors()[0]
        raise SchemaInvalid(_pointer(tuple(first["loc"])), first["msg"]) from e


def report_filename(case_id: str) -> str:
    return f"{case_id}{REPORT_SUFFIX}"


def write_report(report: PeerReviewReport, directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, report_filename(report.case_id))
    with open(path, "wb") as f:
        f.write(serialize_report(report))
    logger.info(f"Wrote review report {path}")
    return path


class VerificationMode(str, Enum):
    STRICT = "Strict"
    CONTENT_NORMALIZED = "ContentNormalized"


class VerificationVerdict(str, Enum):
    VERIFIED = "Verified"
    VERIFIED_CONTENT_ONLY = "VerifiedContentOnly"
    MISMATCH = "Mismatch"
    INACCESSIBLE = "Inaccessible"


@dataclass(frozen=True)
class VerificationOutcome:
    verdict: VerificationVerdict
    details: dict
    checked_at: str

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.value, "details": self.details, "checked_at": self.checked_at}


def verify_against_report(
    report: PeerReviewReport | bytes,
    connector: Downloader,
    mode: VerificationMode | str = VerificationMode.STRICT,
    clock: Clock | None = None,
) -> VerificationOutcome:
    """
    Check that the report's permanent link still serves the reviewed data.

    Strict compares payload digests only. ContentNormalized falls back to the
    content manifest when the payload digests differ.

    Raises:
        SchemaInvalid: ``report`` bytes do not parse.
    """
    if not isinstance(report, PeerReviewReport):
        report = parse_report(report)
    mode = VerificationMode(mode)
    clock = clock or SystemClock()
    section = report.data_section
    details = {
        "permanent_link": section.permanent_link,
        "mode": mode.value,
        "expected_raw_digest": section.raw_digest,
        "expected_manifest_digest": section.content_manifest.manifest_digest,
    }

    try:
        fetched = connector.download(section.permanent_link)
    except FetchFailed as e:
        logger.warning(f"Cannot fetch {section.permanent_link}: {e}")
        details["error"] = f"{e.kind}: {e}"
        return VerificationOutcome(VerificationVerdict.INACCESSIBLE, details, isoformat(clock.now()))

    raw = digest_bytes(fetched.content).hex
    details["observed_raw_digest"] = raw
    if raw == section.raw_digest:
        verdict = VerificationVerdict.VERIFIED
    elif mode is VerificationMode.STRICT:
        verdict = VerificationVerdict.MISMATCH
    else:
        manifest = content_manifest_of(fetched.content)[0]
        details["observed_manifest_digest"] = manifest.manifest_digest.hex
        if manifest.manifest_digest.hex == section.content_manifest.manifest_digest:
            verdict = VerificationVerdict.VERIFIED_CONTENT_ONLY
        else:
            verdict = VerificationVerdict.MISMATCH
    if verdict is VerificationVerdict.MISMATCH:
        details["category"] = "PostAcceptanceChange"

    outcome = VerificationOutcome(verdict, details, isoformat(clock.now()))
    logger.info(f"{report.case_id}: {section.permanent_link} -> {verdict.value}")
    return outcome
