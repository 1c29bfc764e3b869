"""Data types shared by repository connectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Protocol
from urllib.parse import urlparse

from src.errors import InvalidDatasetRef
from src.utils.clock import isoformat

REQUIREMENT_NAMES = (
    "landing-page-accessible",
    "persistent-identifier-present",
    "unique-reviewed-link",
    "prior-versions-accessible",
    "open-access-data",
)


def is_absolute_url(url: str | None) -> bool:
    if not url:
        return False
    parsed = urlparse(url)
    return bool(parsed.scheme) and bool(parsed.netloc)


@dataclass(frozen=True)
class DatasetRef:
    """Where a dataset under review lives. ``download_link`` is the link recorded for review."""

    repository_id: str
    dataset_id: str
    landing_url: str
    download_link: str
    persistent_id: str | None = None
    version_label: str | None = None

    def __post_init__(self):
        for name in ("landing_url", "download_link"):
            value = getattr(self, name)
            if value and not is_absolute_url(value):
                raise InvalidDatasetRef(f"{name} must be an absolute URL, got {value!r}")

    def to_dict(self) -> dict:
        return {
            "repository_id": self.repository_id,
            "dataset_id": self.dataset_id,
            "landing_url": self.landing_url,
            "download_link": self.download_link,
            "persistent_id": self.persistent_id,
            "version_label": self.version_label,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetRef":
        return cls(
            repository_id=data["repository_id"],
            dataset_id=data["dataset_id"],
            landing_url=data.get("landing_url") or "",
            download_link=data.get("download_link") or "",
            persistent_id=data.get("persistent_id"),
            version_label=data.get("version_label"),
        )


@dataclass(frozen=True)
class FetchResult:
    content: bytes
    source_link: str
    fetched_at: datetime
    media_type: str | None = None
    attempt: int = 1

    def __post_init__(self):
        if self.content is None:
            raise ValueError("content must not be None")
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")


@dataclass(frozen=True)
class VersionInfo:
    version_label: str
    download_link: str
    created_at: datetime

    def to_dict(self) -> dict:
        return {
            "version_label": self.version_label,
            "download_link": self.download_link,
            "created_at": isoformat(self.created_at),
        }


@dataclass(frozen=True)
class RequirementCheck:
    name: str
    passed: bool
    evidence: str


@dataclass(frozen=True)
class RequirementReport:
    checks: tuple[RequirementCheck, ...] = field(default_factory=tuple)

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> RequirementCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "overall": "pass" if self.overall else "fail",
            "checks": [
                {"requirement": c.name, "result": "pass" if c.passed else "fail", "evidence": c.evidence}
                for c in self.checks
            ],
        }


class Connector(Protocol):
    """What the engine needs from a data repository."""

    def download(self, link: str) -> FetchResult: ...

    def list_versions(self, dataset_id: str) -> list[VersionInfo]: ...

    def fetch_landing_page(self, url: str) -> FetchResult: ...
