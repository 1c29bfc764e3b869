"""
fixity.py - SHA-256 digests and canonical multi-file manifests.

A dataset is always reduced to a HashManifest (a single file is a one-entry
manifest), so every identity comparison in the engine has one canonical form.
The manifest text is the common checksum-file layout::

    <64 hex>  <path>\\n

sorted by the UTF-8 bytes of the path, which ``sha256sum -c`` accepts.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass
from typing import Iterable, Mapping

from src.errors import DuplicatePath, InvalidPath
from src.utils.logger import get_logger

logger = get_logger("fixity")

ALGORITHM = "SHA-256"
CHUNK_SIZE = 1024 * 1024
SINGLE_PAYLOAD_PATH = "payload"

_HEX64 = re.compile(r"[0-9a-f]{64}")
_CONTROL = re.compile(r"[\x00-\x1f\x7f]")


@dataclass(frozen=True, order=True)
class Digest:
    """A SHA-256 value as 64 lowercase hex characters."""

    hex: str

    def __post_init__(self):
        if not isinstance(self.hex, str) or not _HEX64.fullmatch(self.hex):
            raise ValueError(f"Not a lowercase SHA-256 hex digest: {self.hex!r}")

    def __str__(self) -> str:
        return self.hex


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    digest: Digest
    size: int

    def to_dict(self) -> dict:
        return {"path": self.path, "digest": self.digest.hex, "size": self.size}


@dataclass(frozen=True)
class HashManifest:
    entries: tuple[ManifestEntry, ...]
    manifest_digest: Digest

    def canonical_text(self) -> str:
        return render_entries(self.entries)

    def is_self_consistent(self) -> bool:
        keys = [e.path.encode("utf-8") for e in self.entries]
        ordered = all(a < b for a, b in zip(keys, keys[1:]))
        return ordered and digest_bytes(self.canonical_text().encode("utf-8")) == self.manifest_digest

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "manifest_digest": self.manifest_digest.hex,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "HashManifest":
        entries = tuple(
            ManifestEntry(path=e["path"], digest=Digest(e["digest"]), size=int(e["size"]))
            for e in data["entries"]
        )
        manifest = cls(entries=entries, manifest_digest=Digest(data["manifest_digest"]))
        if not manifest.is_self_consistent():
            raise ValueError("manifest_digest does not match its entries")
        return manifest


def digest_bytes(data: bytes) -> Digest:
    """SHA-256 of a byte sequence (empty input allowed)."""
    return Digest(hashlib.sha256(data).hexdigest())


def digest_file(path: str) -> Digest:
    """Stream a file through SHA-256 without loading it whole."""
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(CHUNK_SIZE), b""):
            sha.update(chunk)
    return Digest(sha.hexdigest())


def normalize_path(path: str) -> str:
    """
    Normalize a dataset-relative path to '/'-separated form.

    Backslashes count as separators, '.' and empty segments are dropped and
    '..' is resolved. Absolute paths, paths escaping the root, empty paths and
    paths with control characters are rejected with InvalidPath.
    """
    if not isinstance(path, str) or not path:
        raise InvalidPath(str(path), "empty")
    if _CONTROL.search(path):
        raise InvalidPath(path, "control character")
    unified = path.replace("\\", "/")
    if unified.startswith("/"):
        raise InvalidPath(path, "absolute path")
    parts: list[str] = []
    for segment in unified.split("/"):
        if segment in ("", "."):
            continue
        if segment == "..":
            if not parts:
                raise InvalidPath(path, "escapes the dataset root")
            parts.pop()
            continue
        parts.append(segment)
    if not parts:
        raise InvalidPath(path, "empty after normalization")
    return "/".join(parts)


def render_entries(entries: Iterable[ManifestEntry]) -> str:
    return "".join(f"{e.digest.hex}  {e.path}\n" for e in entries)


def render_manifest(manifest: HashManifest) -> str:
    """Checksum-file text of a manifest; ``sha256sum -c`` reads it."""
    return manifest.canonical_text()


def manifest_from_entries(entries: Iterable[ManifestEntry]) -> HashManifest:
    ordered = tuple(sorted(entries, key=lambda e: e.path.encode("utf-8")))
    for a, b in zip(ordered, ordered[1:]):
        if a.path == b.path:
            raise DuplicatePath(a.path)
    text = render_entries(ordered)
    return HashManifest(entries=ordered, manifest_digest=digest_bytes(text.encode("utf-8")))


def build_manifest(files: Iterable[tuple[str, bytes]] | Mapping[str, bytes]) -> HashManifest:
    """
    Build the canonical manifest of a set of (path, bytes) pairs.

    Input order does not matter. Two inputs normalizing to the same path
    raise DuplicatePath.
    """
    items = files.items() if isinstance(files, Mapping) else files
    entries = []
    seen: set[str] = set()
    for raw_path, data in items:
        path = normalize_path(raw_path)
        if path in seen:
            raise DuplicatePath(path)
        seen.add(path)
        entries.append(ManifestEntry(path=path, digest=digest_bytes(data), size=len(data)))
    return manifest_from_entries(entries)


def single_payload_manifest(data: bytes) -> HashManifest:
    """One-entry manifest for an opaque (non-archive) payload."""
    return build_manifest([(SINGLE_PAYLOAD_PATH, data)])


def manifest_from_directory(root: str) -> HashManifest:
    """
    Hash every regular file under ``root``.

    Symlinks are not followed. Paths are relative to ``root``.
    """
    entries = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        dirnames.sort()
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            if os.path.islink(full) or not os.path.isfile(full):
                continue
            rel = os.path.relpath(full, root)
            entries.append(
                ManifestEntry(
                    path=normalize_path(rel),
                    digest=digest_file(full),
                    size=os.path.getsize(full),
                )
            )
    manifest = manifest_from_entries(entries)
    logger.debug(f"Hashed {len(entries)} files under {root}")
    return manifest


def parse_manifest_text(text: str) -> list[tuple[Digest, str]]:
    """Read canonical manifest text back into (digest, path) pairs."""
    pairs = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        hex_part, sep, path = line.partition("  ")
        if not sep:
            # sha256sum binary-mode marker
            hex_part, sep, path = line.partition(" *")
        if not sep or not path:
            raise ValueError(f"Line {number}: expected '<digest>  <path>'")
        try:
            pairs.append((Digest(hex_part), path))
        except ValueError as e:
            raise ValueError(f"Line {number}: {e}") from e
    return pairs


def check_directory(root: str, manifest_text: str) -> list[tuple[str, str]]:
    """
    Verify files under ``root`` against manifest text.

    Returns:
        list: (path, status) pairs where status is 'OK', 'FAILED' or 'MISSING'.
    """
    results = []
    for expected, path in parse_manifest_text(manifest_text):
        full = os.path.join(root, *normalize_path(path).split("/"))
        if not os.path.isfile(full):
            results.append((path, "MISSING"))
        elif digest_file(full) == expected:
            results.append((path, "OK"))
        else:
            results.append((path, "FAILED"))
    return results
