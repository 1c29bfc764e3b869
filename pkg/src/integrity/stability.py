"""
stability.py - Download-stability probe.

Fetching the same link twice and getting different hashes does not by itself
mean the data changed: the repository may be re-archiving identical payloads.
The probe separates the two cases by also comparing content manifests.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Protocol

from src.errors import CorruptArchive, FetchFailed, UnsupportedFormat
from src.integrity.archive import looks_like_zip, normalize_archive
from src.integrity.fixity import Digest, HashManifest, digest_bytes, single_payload_manifest
from src.utils.logger import get_logger

logger = get_logger("stability")

DEFAULT_PROBE_COUNT = 2


class StabilityVerdict(str, Enum):
    STABLE = "Stable"
    CONTAINER_NONDETERMINISM = "ContainerNondeterminism"
    CONTENT_DRIFT = "ContentDrift"


class Downloader(Protocol):
    def download(self, link: str): ...


@dataclass(frozen=True)
class StabilityResult:
    verdict: StabilityVerdict
    raw_digests: tuple[Digest, ...]
    content_manifests: tuple[HashManifest, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "raw_digests": [d.hex for d in self.raw_digests],
            "content_manifests": (
                None if self.content_manifests is None else [m.to_dict() for m in self.content_manifests]
            ),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StabilityResult":
        manifests = data.get("content_manifests")
        return cls(
            verdict=StabilityVerdict(data["verdict"]),
            raw_digests=tuple(Digest(h) for h in data["raw_digests"]),
            content_manifests=None if manifests is None else tuple(HashManifest.from_dict(m) for m in manifests),
        )


def derive_verdict(
    raw_digests: tuple[Digest, ...], content_manifests: tuple[HashManifest, ...] | None
) -> StabilityVerdict:
    if len(set(raw_digests)) <= 1:
        return StabilityVerdict.STABLE
    if content_manifests is not None and len({m.manifest_digest for m in content_manifests}) == 1:
        return StabilityVerdict.CONTAINER_NONDETERMINISM
    return StabilityVerdict.CONTENT_DRIFT


def content_manifest_of(payload: bytes) -> tuple[HashManifest, bool]:
    """
    Content identity of a fetched payload.

    Returns the manifest and whether the payload was read as an archive.
    Corrupt archives fall back to the opaque one-entry form.
    """
    if looks_like_zip(payload):
        try:
            return normalize_archive(payload), True
        except (CorruptArchive, UnsupportedFormat) as e:
            logger.warning(f"Payload looks like a ZIP but cannot be normalized ({e}); hashing it opaquely")
    return single_payload_manifest(payload), False


def probe_stability(fetch: Downloader, link: str, n: int = DEFAULT_PROBE_COUNT) -> StabilityResult:
    """Fetch ``link`` n times in sequence and classify the differences."""
    result, _ = probe_with_fetches(fetch, link, n)
    return result


def probe_with_fetches(fetch: Downloader, link: str, n: int = DEFAULT_PROBE_COUNT) -> tuple[StabilityResult, list]:
    """
    Run the stability probe and keep the fetched payloads.

    Args:
        fetch: Anything with ``download(link)`` returning a fetch result with
            a ``content`` attribute.
        link (str): The download link under review.
        n (int): Number of sequential fetches, at least 2.

    Returns:
        tuple: (StabilityResult, list of fetch results in fetch order)

    Raises:
        FetchFailed: Propagated from the connector with ``attempt`` set.
    """
    if n < 2:
        raise ValueError(f"probe needs at least 2 fetches, got {n}")

    fetches = []
    for attempt in range(1, n + 1):
        try:
            fetches.append(fetch.download(link))
        except FetchFailed as e:
            e.attempt = attempt
            logger.warning(f"Fetch {attempt}/{n} of {link} failed: {e}")
            raise

    raw = tuple(digest_bytes(f.content) for f in fetches)
    identities = [content_manifest_of(f.content) for f in fetches]
    manifests = None
    if all(is_archive for _, is_archive in identities):
        manifests = tuple(m for m, _ in identities)

    result = StabilityResult(verdict=derive_verdict(raw, manifests), raw_digests=raw, content_manifests=manifests)
    if result.verdict is StabilityVerdict.STABLE:
        logger.info(f"Probe of {link}: stable over {n} fetches")
    else:
        logger.warning(f"Probe of {link}: {result.verdict.value} over {n} fetches")
    return result, fetches
