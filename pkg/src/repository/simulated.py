"""
simulated.py - In-process data repositories with fault injection.

Four behaviors reproduce what can go wrong on the repository side:

    Faithful      every version gets its own link, history is retained
    TimestampZip  like Faithful, but each download re-archives the payload
                  stamped with the current time
    Mutable       one stable link per dataset; replacing content changes what
                  that link serves, silently
    Overwriting   versioned links, but an update deletes the previous version

Links look like ``<base>/datasets/<dataset_id>/v<k>`` (plus ``/latest``);
only the path is used to resolve them, so the same repository can be served
through the loopback HTTP facade.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Mapping
from urllib.parse import urlparse

from src.errors import NotFound
from src.integrity.archive import build_deterministic_zip
from src.integrity.fixity import digest_bytes, normalize_path
from src.repository.models import DatasetRef, FetchResult, VersionInfo
from src.utils.clock import Clock, SystemClock
from src.utils.logger import get_logger

logger = get_logger("repository.simulated")

# ZIP entry times have two-second resolution
ZIP_TIME_RESOLUTION = timedelta(seconds=2)


class RepositoryBehavior(str, Enum):
    FAITHFUL = "Faithful"
    TIMESTAMP_ZIP = "TimestampZip"
    MUTABLE = "Mutable"
    OVERWRITING = "Overwriting"


@dataclass
class _Version:
    label: str
    files: dict[str, bytes]
    created_at: datetime
    served: bytes  # precomputed body; unused by TimestampZip


@dataclass
class _Dataset:
    dataset_id: str
    versions: list[_Version] = field(default_factory=list)
    withdrawn: bool = False
    next_number: int = 1


def _serve_body(files: Mapping[str, bytes]) -> bytes:
    if len(files) == 1:
        return next(iter(files.values()))
    return build_deterministic_zip(files)


class SimulatedRepository:
    """
    Connector side of a simulated repository.

    Downloads and admin mutations take the same lock, so a download sees a
    dataset entirely before or entirely after a mutation.
    """

    def __init__(
        self,
        behavior: RepositoryBehavior | str = RepositoryBehavior.FAITHFUL,
        repository_id: str = "sim-repo",
        clock: Clock | None = None,
        base_url: str | None = None,
    ):
        self.behavior = RepositoryBehavior(behavior)
        self.repository_id = repository_id
        self.clock = clock or SystemClock()
        self.base_url = (base_url or f"sim://{repository_id}").rstrip("/")
        self._datasets: dict[str, _Dataset] = {}
        self._lock = threading.RLock()
        self.download_count = 0
        self._last_stamp: datetime | None = None

    # --- links ---------------------------------------------------------------

    def landing_url(self, dataset_id: str) -> str:
        return f"{self.base_url}/datasets/{dataset_id}"

    def _version_link(self, dataset_id: str, label: str) -> str:
        if self.behavior is RepositoryBehavior.MUTABLE:
            return f"{self.landing_url(dataset_id)}/latest"
        return f"{self.landing_url(dataset_id)}/{label}"

    @staticmethod
    def _parse(link: str) -> tuple[str, str | None]:
        parts = [p for p in urlparse(link).path.split("/") if p]
        if len(parts) >= 2 and parts[0] == "datasets":
            return parts[1], (parts[2] if len(parts) > 2 else None)
        raise NotFound(f"Unknown link {link}", link=link)

    def _dataset(self, dataset_id: str, link: str | None = None) -> _Dataset:
        ds = self._datasets.get(dataset_id)
        if ds is None or ds.withdrawn:
            raise NotFound(f"Dataset {dataset_id} is not available", link=link)
        return ds

    def _resolve(self, link: str) -> _Version:
        dataset_id, selector = self._parse(link)
        ds = self._dataset(dataset_id, link)
        if selector is None:
            raise NotFound(f"{link} is a landing page, not a download link", link=link)
        if selector == "latest":
            return ds.versions[-1]
        for version in ds.versions:
            if version.label == selector:
                return version
        raise NotFound(f"Version {selector} of {dataset_id} is not available", link=link)

    # --- connector -----------------------------------------------------------

    def download(self, link: str) -> FetchResult:
        with self._lock:
            version = self._resolve(link)
            now = self.clock.now()
            if self.behavior is RepositoryBehavior.TIMESTAMP_ZIP:
                # Compression starts when the download starts, stamping "now"
                body = build_deterministic_zip(version.files, timestamp=self._next_stamp(now))
                media_type = "application/zip"
            else:
                body = version.served
                media_type = "application/zip" if len(version.files) > 1 else "application/octet-stream"
            self.download_count += 1
        return FetchResult(content=body, source_link=link, fetched_at=now, media_type=media_type)

    def _next_stamp(self, now: datetime) -> datetime:
        """Each re-archive lands in a later ZIP time slot than the one before."""
        if self._last_stamp is not None:
            now = max(now, self._last_stamp + ZIP_TIME_RESOLUTION)
        self._last_stamp = now
        return now

    def list_versions(self, dataset_id: str) -> list[VersionInfo]:
        with self._lock:
            ds = self._dataset(dataset_id)
            return [
                VersionInfo(v.label, self._version_link(dataset_id, v.label), v.created_at)
                for v in ds.versions
            ]

    def fetch_landing_page(self, url: str) -> FetchResult:
        dataset_id, selector = self._parse(url)
        if selector is not None:
            raise NotFound(f"{url} is not a landing page", link=url)
        with self._lock:
            body = self.render_landing_page(dataset_id).encode("utf-8")
        return FetchResult(content=body, source_link=url, fetched_at=self.clock.now(), media_type="text/html")

    def render_landing_page(self, dataset_id: str) -> str:
        """HTML landing page listing each version with its link and SHA-256."""
        with self._lock:
            ds = self._dataset(dataset_id)
            rows = []
            for v in ds.versions:
                link = self._version_link(dataset_id, v.label)
                if self.behavior is RepositoryBehavior.TIMESTAMP_ZIP:
                    sha = "(generated on download)"
                else:
                    sha = digest_bytes(v.served).hex
                rows.append(f"<li>{v.label}: <a href=\"{link}\">{link}</a> SHA-256 {sha}</li>")
        return (
            f"<html><head><title>{dataset_id}</title></head><body>"
            f"<h1>Dataset {dataset_id}</h1><p>Repository: {self.repository_id}</p>"
            f"<ul>{''.join(rows)}</ul></body></html>"
        )

    # --- admin ---------------------------------------------------------------

    def _ref(self, ds: _Dataset, persistent_id: str | None) -> DatasetRef:
        latest = ds.versions[-1]
        return DatasetRef(
            repository_id=self.repository_id,
            dataset_id=ds.dataset_id,
            landing_url=self.landing_url(ds.dataset_id),
            download_link=self._version_link(ds.dataset_id, latest.label),
            persistent_id=persistent_id,
            version_label=latest.label,
        )

    def register(self, dataset_id: str, files: Mapping[str, bytes], persistent_id: str | None = None) -> DatasetRef:
        files = {normalize_path(p): bytes(b) for p, b in files.items()}
        if not files:
            raise ValueError("A dataset needs at least one file")
        with self._lock:
            if dataset_id in self._datasets and not self._datasets[dataset_id].withdrawn:
                raise ValueError(f"Dataset {dataset_id} is already registered")
            ds = _Dataset(dataset_id=dataset_id)
            self._datasets[dataset_id] = ds
            self._append_version(ds, files)
            logger.info(f"[{self.repository_id}] registered {dataset_id} ({len(files)} files)")
            return self._ref(ds, persistent_id)

    def _append_version(self, ds: _Dataset, files: dict[str, bytes]) -> _Version:
        version = _Version(
            label=f"v{ds.next_number}",
            files=files,
            created_at=self.clock.now(),
            served=_serve_body(files),
        )
        ds.next_number += 1
        ds.versions.append(version)
        return version

    def replace(self, dataset_id: str, files: Mapping[str, bytes]) -> VersionInfo:
        files = {normalize_path(p): bytes(b) for p, b in files.items()}
        with self._lock:
            ds = self._dataset(dataset_id)
            version = self._append_version(ds, files)
            if self.behavior is RepositoryBehavior.OVERWRITING:
                del ds.versions[:-1]
            logger.info(f"[{self.repository_id}] {dataset_id} now at {version.label} ({self.behavior.value})")
            return VersionInfo(version.label, self._version_link(dataset_id, version.label), version.created_at)

    def withdraw(self, dataset_id: str) -> None:
        with self._lock:
            self._dataset(dataset_id).withdrawn = True
            logger.info(f"[{self.repository_id}] {dataset_id} withdrawn")

    def current_files(self, dataset_id: str) -> dict[str, bytes]:
        with self._lock:
            return dict(self._dataset(dataset_id).versions[-1].files)


class RepositoryAdmin:
    """
    Administrator handle. Mutations change what is served and notify nobody.
    """

    def __init__(self, repository: SimulatedRepository):
        self.repository = repository

    def register(self, dataset_id: str, files: Mapping[str, bytes], persistent_id: str | None = None) -> DatasetRef:
        return self.repository.register(dataset_id, files, persistent_id)

    def admin_replace(self, dataset_id: str, new_files: Mapping[str, bytes]) -> VersionInfo:
        return self.repository.replace(dataset_id, new_files)

    def admin_withdraw(self, dataset_id: str) -> None:
        self.repository.withdraw(dataset_id)

    def current_files(self, dataset_id: str) -> dict[str, bytes]:
        return self.repository.current_files(dataset_id)


def simulated_repo(
    behavior: RepositoryBehavior | str,
    clock: Clock | None = None,
    repository_id: str = "sim-repo",
) -> tuple[SimulatedRepository, RepositoryAdmin]:
    """Build a simulated repository and its admin handle."""
    repository = SimulatedRepository(behavior, repository_id=repository_id, clock=clock)
    return repository, RepositoryAdmin(repository)
