"""
http_fetch.py - HTTP(S) downloads with redirect, size and time limits.

A body is either returned complete or the call raises; a partial body is never
reported as a successful fetch.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Any
from urllib.parse import urlparse

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from src.errors import FetchTimeout, NotFound, RepositoryError, TooLarge, TooManyRedirects, TransportError
from src.repository.models import FetchResult, VersionInfo
from src.utils.clock import Clock, SystemClock, parse_isoformat
from src.utils.logger import get_logger

logger = get_logger("repository.http")

CHUNK_SIZE = 64 * 1024

_RETRY_OPTIONS: dict[str, Any] = {
    "total": 2,
    "read": False,
    "backoff_factor": 0.2,
    "status_forcelist": (502, 503, 504),
    "allowed_methods": ("GET",),
    "raise_on_status": False,
}


@dataclass(frozen=True)
class FetchLimits:
    max_bytes: int = 512 * 1024 * 1024
    timeout: float = 30.0
    max_redirects: int = 5


class TimeoutHTTPAdapter(HTTPAdapter):
    """HTTPAdapter that enforces a default timeout."""

    def __init__(self, *args: Any, timeout: float | None = None, **kwargs: Any) -> None:
        self.timeout = timeout
        super().__init__(*args, **kwargs)

    def send(self, request: requests.PreparedRequest, **kwargs: Any) -> requests.Response:
        if kwargs.get("timeout") is None:
            kwargs["timeout"] = self.timeout
        return super().send(request, **kwargs)


def make_session(user_agent: str, limits: FetchLimits) -> requests.Session:
    session = requests.Session()
    adapter = TimeoutHTTPAdapter(max_retries=Retry(**_RETRY_OPTIONS), timeout=limits.timeout)
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    session.headers.update({"User-Agent": user_agent})
    session.max_redirects = limits.max_redirects
    return session


def http_fetch(
    url: str,
    limits: FetchLimits = FetchLimits(),
    session: requests.Session | None = None,
    clock: Clock | None = None,
    attempt: int = 1,
) -> FetchResult:
    """
    GET ``url`` following at most ``limits.max_redirects`` redirects.

    Raises:
        NotFound: 404 or 410.
        TooLarge: Declared or streamed body above ``limits.max_bytes``.
        FetchTimeout: Connect/read timeout, or total time above ``limits.timeout``.
        TooManyRedirects: Redirect chain longer than allowed.
        TransportError: Any other network failure or non-2xx status.
    """
    if urlparse(url).scheme.lower() not in ("http", "https"):
        raise TransportError(f"Unsupported URL scheme: {url}", link=url, attempt=attempt)

    clock = clock or SystemClock()
    own_session = session is None
    session = session or make_session("fixity-review/1.0", limits)
    session.max_redirects = limits.max_redirects
    deadline = time.monotonic() + limits.timeout

    try:
        with session.get(url, stream=True, timeout=limits.timeout, allow_redirects=True) as r:
            if r.status_code in (404, 410):
                raise NotFound(f"{url} returned HTTP {r.status_code}", link=url, attempt=attempt)
            if not 200 <= r.status_code < 300:
                raise TransportError(f"{url} returned HTTP {r.status_code}", link=url, attempt=attempt)

            content_length = r.headers.get("Content-Length")
            if content_length and content_length.isdigit() and int(content_length) > limits.max_bytes:
                raise TooLarge(f"Content-Length {content_length} exceeds {limits.max_bytes} bytes", link=url, attempt=attempt)

            chunks = []
            received = 0
            for chunk in r.iter_content(chunk_size=CHUNK_SIZE):
                received += len(chunk)
                if received > limits.max_bytes:
                    raise TooLarge(f"Response body exceeds {limits.max_bytes} bytes", link=url, attempt=attempt)
                if time.monotonic() > deadline:
                    raise FetchTimeout(f"Download of {url} exceeded {limits.timeout}s", link=url, attempt=attempt)
                chunks.append(chunk)

            logger.debug(f"Fetched {received} bytes from {url} ({len(r.history)} redirects)")
            return FetchResult(
                content=b"".join(chunks),
                source_link=url,
                fetched_at=clock.now(),
                media_type=r.headers.get("Content-Type"),
                attempt=attempt,
            )
    except requests.TooManyRedirects as e:
        raise TooManyRedirects(f"More than {limits.max_redirects} redirects from {url}", link=url, attempt=attempt) from e
    except requests.Timeout as e:
        raise FetchTimeout(f"Timed out fetching {url}: {e}", link=url, attempt=attempt) from e
    except requests.RequestException as e:
        raise TransportError(f"Cannot fetch {url}: {e}", link=url, attempt=attempt) from e
    finally:
        if own_session:
            session.close()


class HttpConnector:
    """
    Connector for repositories reachable over HTTP(S).

    Version listing uses a JSON endpoint ``<api_base>/datasets/<id>/versions``
    when ``api_base`` is given (the loopback facade serves one); real
    repositories without such an endpoint report listing as unsupported.
    """

    def __init__(
        self,
        limits: FetchLimits = FetchLimits(),
        user_agent: str = "fixity-review/1.0",
        api_base: str | None = None,
        clock: Clock | None = None,
    ):
        self.limits = limits
        self.api_base = api_base.rstrip("/") if api_base else None
        self.clock = clock or SystemClock()
        self.session = make_session(user_agent, limits)

    def download(self, link: str) -> FetchResult:
        return http_fetch(link, self.limits, session=self.session, clock=self.clock)

    def fetch_landing_page(self, url: str) -> FetchResult:
        return http_fetch(url, self.limits, session=self.session, clock=self.clock)

    def list_versions(self, dataset_id: str) -> list[VersionInfo]:
        if not self.api_base:
            raise RepositoryError("This repository exposes no version listing endpoint")
        result = http_fetch(f"{self.api_base}/datasets/{dataset_id}/versions", self.limits,
                            session=self.session, clock=self.clock)
        try:
            rows = json.loads(result.content.decode("utf-8"))
            return [
                VersionInfo(
                    version_label=row["version_label"],
                    download_link=row["download_link"],
                    created_at=parse_isoformat(row["created_at"]),
                )
                for row in rows
            ]
        except (ValueError, KeyError, TypeError) as e:
            raise TransportError(f"Malformed version listing for {dataset_id}: {e}") from e

    def close(self) -> None:
        self.session.close()
