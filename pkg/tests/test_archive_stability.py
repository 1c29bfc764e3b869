import io
import random
import zipfile
from datetime import datetime
from types import SimpleNamespace

import pytest

from helpers import CHANGED_FILES, DATASET_FILES, change_one_byte, random_files
from src.errors import CorruptArchive, DuplicatePath, NotFound, UnsupportedFormat
from src.integrity.archive import build_deterministic_zip, normalize_archive
from src.integrity.fixity import build_manifest, digest_bytes, single_payload_manifest
from src.integrity.stability import (
    StabilityResult,
    StabilityVerdict,
    content_manifest_of,
    derive_verdict,
    probe_stability,
    probe_with_fetches,
)


class FakeDownloader:
    """Serves a fixed sequence of payloads, or raises at a given fetch."""

    def __init__(self, payloads, fail_at=None):
        self.payloads = list(payloads)
        self.fail_at = fail_at
        self.calls = 0

    def download(self, link):
        self.calls += 1
        if self.fail_at == self.calls:
            raise NotFound("gone", link=link)
        return SimpleNamespace(content=self.payloads[(self.calls - 1) % len(self.payloads)])


def test_archive_manifest_ignores_container_metadata():
    a = build_deterministic_zip(DATASET_FILES)
    b = build_deterministic_zip(DATASET_FILES, timestamp=datetime(2021, 6, 1, 12, 30, 4), compresslevel=9,
                                order=reversed(sorted(DATASET_FILES)))
    assert a != b
    assert normalize_archive(a) == normalize_archive(b)
    assert normalize_archive(a) == build_manifest(DATASET_FILES)


def test_deterministic_zip_is_reproducible():
    assert build_deterministic_zip(DATASET_FILES) == build_deterministic_zip(dict(reversed(DATASET_FILES.items())))


def test_archive_with_directory_entries():
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("data/", b"")
        zf.writestr("data/x.csv", b"x")
    assert [e.path for e in normalize_archive(buf.getvalue()).entries] == ["data/x.csv"]


def test_truncated_archive_is_corrupt():
    data = build_deterministic_zip(DATASET_FILES)
    with pytest.raises(CorruptArchive):
        normalize_archive(data[: len(data) // 2])


def test_non_zip_and_unknown_format_are_unsupported():
    with pytest.raises(UnsupportedFormat):
        normalize_archive(b"plain,csv\n1,2\n")
    with pytest.raises(UnsupportedFormat):
        normalize_archive(build_deterministic_zip(DATASET_FILES), "tar")


def test_archive_entries_colliding_after_normalization():
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("a/b", b"1")
        zf.writestr("a\\b", b"2")
    with pytest.raises(DuplicatePath):
        normalize_archive(buf.getvalue())


def test_corrupt_zip_falls_back_to_opaque_manifest():
    data = build_deterministic_zip(DATASET_FILES)[:40]
    manifest, is_archive = content_manifest_of(data)
    assert not is_archive
    assert manifest == single_payload_manifest(data)


def test_probe_stable_when_bytes_repeat():
    payload = build_deterministic_zip(DATASET_FILES)
    result = probe_stability(FakeDownloader([payload]), "http://repo/ds", n=3)
    assert result.verdict is StabilityVerdict.STABLE
    assert result.raw_digests == (digest_bytes(payload),) * 3
    assert result.content_manifests[0] == build_manifest(DATASET_FILES)


def test_probe_container_nondeterminism_when_only_zip_metadata_changes():
    payloads = [build_deterministic_zip(DATASET_FILES, timestamp=datetime(2019, 1, 1, 0, 0, s)) for s in (0, 2, 4)]
    result = probe_stability(FakeDownloader(payloads), "http://repo/ds", n=3)
    assert result.verdict is StabilityVerdict.CONTAINER_NONDETERMINISM
    assert len(set(result.raw_digests)) == 3


def test_probe_content_drift_when_payload_content_changes():
    payloads = [build_deterministic_zip(DATASET_FILES), build_deterministic_zip(CHANGED_FILES)]
    result = probe_stability(FakeDownloader(payloads), "http://repo/ds", n=2)
    assert result.verdict is StabilityVerdict.CONTENT_DRIFT


def test_probe_opaque_payloads_that_differ_drift():
    result = probe_stability(FakeDownloader([b"v1", b"v2"]), "http://repo/ds", n=2)
    assert result.verdict is StabilityVerdict.CONTENT_DRIFT
    assert result.content_manifests is None


def test_probe_opaque_payload_stable():
    result, fetches = probe_with_fetches(FakeDownloader([b"same"]), "http://repo/ds", n=2)
    assert result.verdict is StabilityVerdict.STABLE
    assert result.content_manifests is None
    assert [f.content for f in fetches] == [b"same", b"same"]


def test_probe_needs_two_fetches():
    with pytest.raises(ValueError):
        probe_stability(FakeDownloader([b"x"]), "http://repo/ds", n=1)


def test_probe_failure_records_attempt():
    downloader = FakeDownloader([b"x"], fail_at=2)
    with pytest.raises(NotFound) as info:
        probe_stability(downloader, "http://repo/ds", n=3)
    assert info.value.attempt == 2
    assert downloader.calls == 2


def test_stability_result_dict_round_trip():
    payloads = [build_deterministic_zip(DATASET_FILES, timestamp=datetime(2019, 1, 1, 0, 0, s)) for s in (0, 2)]
    result = probe_stability(FakeDownloader(payloads), "http://repo/ds", n=2)
    assert StabilityResult.from_dict(result.to_dict()) == result


def _random_stamp(rng):
    return datetime(rng.randint(1980, 2100), rng.randint(1, 12), rng.randint(1, 28),
                    rng.randrange(24), rng.randrange(60), rng.randrange(0, 60, 2))


def _random_zip(files, rng):
    order = list(files)
    rng.shuffle(order)
    return build_deterministic_zip(files, timestamp=_random_stamp(rng), compresslevel=rng.randint(0, 9),
                                   order=order)


@pytest.mark.slow
def test_archive_manifest_ignores_container_metadata_for_random_payloads():
    rng = random.Random(1980)
    for _ in range(1000):
        files = random_files(rng)
        assert normalize_archive(_random_zip(files, rng)) == build_manifest(files)


def _zip_contents(payload):
    if payload[:4] != b"PK\x03\x04":
        return None
    with zipfile.ZipFile(io.BytesIO(payload)) as zf:
        return {info.filename: zf.read(info) for info in zf.infolist()}


def _expected_verdict(payloads):
    if all(p == payloads[0] for p in payloads):
        return StabilityVerdict.STABLE
    contents = [_zip_contents(p) for p in payloads]
    if None not in contents and all(c == contents[0] for c in contents):
        return StabilityVerdict.CONTAINER_NONDETERMINISM
    return StabilityVerdict.CONTENT_DRIFT


@pytest.mark.slow
def test_stability_verdict_matches_payload_comparison():
    rng = random.Random(2019)
    seen = set()
    for _ in range(1000):
        files = random_files(rng)
        fixed = build_deterministic_zip(files)
        pool = [
            fixed,
            _random_zip(files, rng),
            _random_zip(change_one_byte(files, rng), rng),
            b"opaque:" + rng.randbytes(16),
        ]
        weights = rng.choice([(1, 0, 0, 0), (1, 1, 0, 0), (3, 3, 1, 0), (1, 1, 1, 1), (0, 0, 0, 1)])
        payloads = rng.choices(pool, weights=weights, k=rng.randint(2, 4))

        result = probe_stability(FakeDownloader(payloads), "sim://repo/datasets/x/v1", len(payloads))
        assert result.verdict is _expected_verdict(payloads)
        assert result.raw_digests == tuple(digest_bytes(p) for p in payloads)
        assert derive_verdict(result.raw_digests, result.content_manifests) is result.verdict
        if result.content_manifests is not None:
            assert all(m.is_self_consistent() for m in result.content_manifests)
        seen.add(result.verdict)
    assert seen == set(StabilityVerdict)
