"""
archive.py - Archive content normalization.

Repositories that compress on download produce byte-different containers for
identical payloads. Normalizing to a manifest over the decompressed entries
ignores timestamps, permissions, entry order and compression level.
"""

from __future__ import annotations

import io
import zipfile
import zlib
from datetime import datetime
from enum import Enum
from typing import Iterable, Mapping

from src.errors import CorruptArchive, DuplicatePath, UnsupportedFormat
from src.integrity.fixity import HashManifest, ManifestEntry, digest_bytes, manifest_from_entries, normalize_path


ZIP_MAGIC = (b"PK\x03\x04", b"PK\x05\x06")
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class ArchiveFormat(str, Enum):
    ZIP = "zip"


def looks_like_zip(data: bytes) -> bool:
    return data[:4] in ZIP_MAGIC


def normalize_archive(data: bytes, fmt: ArchiveFormat | str = ArchiveFormat.ZIP) -> HashManifest:
    """
    Manifest over the decompressed payloads of an archive.

    Raises:
        UnsupportedFormat: Format other than ZIP, or bytes that are not a ZIP.
        CorruptArchive: Truncated data or a CRC mismatch.
        DuplicatePath: Two entries normalize to the same path.
    """
    try:
        fmt = ArchiveFormat(fmt)
    except ValueError as e:
        raise UnsupportedFormat(f"Archive format {fmt!r} is not supported") from e
    if not looks_like_zip(data):
        raise UnsupportedFormat("Data is not a ZIP archive")

    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            for info in zf.infolist():
                if info.is_dir():
                    continue
                path = normalize_path(info.filename)
                if path in seen:
                    raise DuplicatePath(path)
                seen.add(path)
                payload = zf.read(info)  # verifies the CRC
                entries.append(ManifestEntry(path=path, digest=digest_bytes(payload), size=len(payload)))
    except (zipfile.BadZipFile, zlib.error, EOFError, NotImplementedError) as e:
        raise CorruptArchive(f"Cannot read ZIP archive: {e}") from e
    return manifest_from_entries(entries)


def build_deterministic_zip(
    files: Mapping[str, bytes] | Iterable[tuple[str, bytes]],
    timestamp: datetime | tuple | None = None,
    compresslevel: int = 6,
    order: Iterable[str] | None = None,
) -> bytes:
    """
    Build a ZIP of ``files`` with every entry stamped ``timestamp``.

    With the default timestamp (1980-01-01) and order (sorted paths) the
    output is byte-reproducible; the simulated repositories vary the
    timestamp to reproduce on-download recompression.
    """
    items = dict(files.items() if isinstance(files, Mapping) else files)
    if timestamp is None:
        date_time = ZIP_EPOCH
    elif isinstance(timestamp, datetime):
        date_time = (timestamp.year, timestamp.month, timestamp.day,
                     timestamp.hour, timestamp.minute, timestamp.second)
    else:
        date_time = tuple(timestamp)
    names = list(order) if order is not None else sorted(items)

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name in names:
            info = zipfile.ZipInfo(name, date_time=date_time)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, items[name], compresslevel=compresslevel)
    return buf.getvalue()
