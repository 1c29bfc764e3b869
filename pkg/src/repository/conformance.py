"""
conformance.py - Behavioral check of a repository against the journal's requirements.

Requirements are exercised against the live connector rather than read from
repository self-declarations. When an admin handle is available, the update
checks run on a scratch copy of the dataset so the reviewed data is untouched.
"""

from __future__ import annotations

import re

from src.errors import FetchFailed, RepositoryError
from src.integrity.fixity import digest_bytes
from src.integrity.stability import content_manifest_of
from src.repository.models import Connector, DatasetRef, RequirementCheck, RequirementReport
from src.repository.simulated import RepositoryAdmin
from src.utils.logger import get_logger

logger = get_logger("repository.conformance")

DOI_PATTERN = re.compile(r"^(doi:|https?://(dx\.)?doi\.org/)?10\.\d{4,9}/\S+$", re.IGNORECASE)
CONFORMANCE_SUFFIX = "--conformance"


def _same_content(a: bytes, b: bytes) -> bool:
    if digest_bytes(a) == digest_bytes(b):
        return True
    return content_manifest_of(a)[0].manifest_digest == content_manifest_of(b)[0].manifest_digest


def _check_landing(connector: Connector, ref: DatasetRef) -> RequirementCheck:
    name = "landing-page-accessible"
    if not ref.landing_url:
        return RequirementCheck(name, False, "dataset reference has no landing URL")
    try:
        page = connector.fetch_landing_page(ref.landing_url)
    except FetchFailed as e:
        return RequirementCheck(name, False, f"{ref.landing_url}: {e.kind}: {e}")
    if not page.content:
        return RequirementCheck(name, False, f"{ref.landing_url} returned an empty page")
    return RequirementCheck(name, True, f"{ref.landing_url} served {len(page.content)} bytes")


def _check_pid(ref: DatasetRef) -> RequirementCheck:
    name = "persistent-identifier-present"
    if not ref.persistent_id or not ref.persistent_id.strip():
        return RequirementCheck(name, False, "no persistent identifier recorded")
    shape = "DOI" if DOI_PATTERN.match(ref.persistent_id.strip()) else "non-DOI identifier"
    return RequirementCheck(name, True, f"{ref.persistent_id} ({shape})")


def _check_open_access(connector: Connector, ref: DatasetRef) -> tuple[RequirementCheck, bytes | None]:
    name = "open-access-data"
    try:
        result = connector.download(ref.download_link)
    except FetchFailed as e:
        return RequirementCheck(name, False, f"anonymous download failed: {e.kind}: {e}"), None
    return RequirementCheck(name, True, f"anonymous download of {len(result.content)} bytes"), result.content


def _update_checks(connector: Connector, admin: RepositoryAdmin, ref: DatasetRef) -> list[RequirementCheck]:
    """Update a scratch copy and confirm the old link and versions survive."""
    scratch_id = f"{ref.dataset_id}{CONFORMANCE_SUFFIX}"
    files = admin.current_files(ref.dataset_id)
    scratch = admin.register(scratch_id, files, ref.persistent_id)
    try:
        return _run_update_checks(connector, admin, scratch_id, scratch, files)
    finally:
        admin.admin_withdraw(scratch_id)


def _run_update_checks(
    connector: Connector, admin: RepositoryAdmin, scratch_id: str, scratch: DatasetRef, files: dict[str, bytes]
) -> list[RequirementCheck]:
    before = connector.download(scratch.download_link).content
    changed = {path: data + b"\n# conformance update\n" for path, data in files.items()}
    admin.admin_replace(scratch_id, changed)

    try:
        after = connector.download(scratch.download_link).content
        if _same_content(before, after):
            unique = RequirementCheck("unique-reviewed-link", True,
                                      "after an update the reviewed link still serves the reviewed version")
        else:
            unique = RequirementCheck("unique-reviewed-link", False,
                                      "after an update the reviewed link serves different content")
    except FetchFailed as e:
        unique = RequirementCheck("unique-reviewed-link", False,
                                  f"after an update the reviewed link is gone: {e.kind}")

    try:
        versions = connector.list_versions(scratch_id)
    except (FetchFailed, RepositoryError) as e:
        prior = RequirementCheck("prior-versions-accessible", False, f"version listing failed: {e}")
    else:
        links = {v.download_link for v in versions}
        if len(versions) < 2:
            prior = RequirementCheck("prior-versions-accessible", False,
                                     f"{len(versions)} version(s) listed after one update")
        elif len(links) < len(versions):
            prior = RequirementCheck("prior-versions-accessible", False,
                                     "versions share a download link; earlier content is unreachable")
        else:
            try:
                first = connector.download(versions[0].download_link).content
                ok = _same_content(first, before)
            except FetchFailed:
                ok = False
            prior = RequirementCheck(
                "prior-versions-accessible", ok,
                f"{len(versions)} versions listed; first version "
                + ("serves its original bytes" if ok else "no longer serves its original bytes"),
            )
    return [unique, prior]


def _passive_checks(connector: Connector, ref: DatasetRef, reviewed: bytes | None) -> list[RequirementCheck]:
    """Without an admin handle: re-fetch and list, without updating."""
    if reviewed is None:
        unique = RequirementCheck("unique-reviewed-link", False, "reviewed link could not be fetched")
    else:
        try:
            again = connector.download(ref.download_link).content
            unique = RequirementCheck("unique-reviewed-link", _same_content(reviewed, again),
                                      "no admin handle; compared two fetches of the reviewed link")
        except FetchFailed as e:
            unique = RequirementCheck("unique-reviewed-link", False, f"second fetch failed: {e.kind}")
    try:
        versions = connector.list_versions(ref.dataset_id)
    except (FetchFailed, RepositoryError) as e:
        prior = RequirementCheck("prior-versions-accessible", False, f"version listing failed: {e}")
    else:
        broken = []
        for v in versions:
            try:
                connector.download(v.download_link)
            except FetchFailed:
                broken.append(v.version_label)
        prior = RequirementCheck(
            "prior-versions-accessible", not broken and bool(versions),
            f"{len(versions)} versions listed" + (f"; unreachable: {', '.join(broken)}" if broken else ""),
        )
    return [unique, prior]


def check_repo_requirements(
    connector: Connector, dataset_ref: DatasetRef, admin: RepositoryAdmin | None = None
) -> RequirementReport:
    """
    Run the five repository requirement checks.

    Failures are report entries, never exceptions.
    """
    landing = _check_landing(connector, dataset_ref)
    pid = _check_pid(dataset_ref)
    open_access, reviewed = _check_open_access(connector, dataset_ref)

    if admin is not None and reviewed is not None:
        try:
            unique, prior = _update_checks(connector, admin, dataset_ref)
        except (FetchFailed, RepositoryError, ValueError) as e:
            logger.warning(f"Update-based conformance checks failed to run: {e}")
            unique = RequirementCheck("unique-reviewed-link", False, f"update check could not run: {e}")
            prior = RequirementCheck("prior-versions-accessible", False, f"update check could not run: {e}")
    else:
        unique, prior = _passive_checks(connector, dataset_ref, reviewed)

    report = RequirementReport(checks=(landing, pid, unique, prior, open_access))
    logger.info(f"Repository conformance for {dataset_ref.dataset_id}: {'pass' if report.overall else 'fail'}")
    return report
