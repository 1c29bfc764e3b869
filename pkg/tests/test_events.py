import random

import pytest

from helpers import HAPPY_PATH
from src.errors import ChainBroken, GapInSequence
from src.review.engine import replay
from src.review.events import GENESIS_DIGEST, EventLog, ReviewEvent, chain_event, verify_chain
from src.review.models import CaseState, Role


def _log_bytes(count=5):
    events, previous = [], None
    for i in range(count):
        previous = chain_event(previous, "C-1", Role.EDITOR, "editor", "note", {"n": i, "text": "ü"},
                               f"2019-03-01T09:0{i}:00Z")
        events.append(previous)
    return b"".join(e.to_line() for e in events), events


def test_chain_links_each_event_to_its_predecessor():
    data, events = _log_bytes()
    assert events[0].prev_digest == GENESIS_DIGEST
    assert all(b.prev_digest == a.this_digest for a, b in zip(events, events[1:]))
    assert verify_chain(data) == events


def test_event_line_is_canonical_json():
    _, events = _log_bytes(1)
    line = events[0].to_line()
    assert line.endswith(b"\n") and line.count(b"\n") == 1
    assert line.index(b'"actor"') < line.index(b'"case_id"') < line.index(b'"seq"')


def test_payload_tuples_become_lists_before_digesting():
    event = chain_event(None, "C-1", Role.AUTHOR, "a", "note", {"evidence": ("x", "y")}, "2019-03-01T09:00:00Z")
    assert event.payload == {"evidence": ["x", "y"]}
    assert verify_chain(event.to_line()) == [event]


def test_empty_log_is_empty():
    assert verify_chain(b"") == []


@pytest.mark.slow
def test_every_single_byte_corruption_is_detected():
    data, _ = _log_bytes(8)
    rng = random.Random(20190301)
    for _ in range(1000):
        position = rng.randrange(len(data))
        corrupted = bytearray(data)
        corrupted[position] ^= rng.randrange(1, 256)
        with pytest.raises(ChainBroken):
            verify_chain(bytes(corrupted))


def test_dropped_event_is_a_gap():
    data, events = _log_bytes(4)
    without_second = b"".join(e.to_line() for e in events[:1] + events[2:])
    with pytest.raises(GapInSequence) as info:
        verify_chain(without_second)
    assert info.value.seq == 2 and info.value.found == 3


def test_reordered_events_are_detected():
    _, events = _log_bytes(3)
    swapped = b"".join(e.to_line() for e in (events[0], events[2], events[1]))
    with pytest.raises((ChainBroken, GapInSequence)):
        verify_chain(swapped)


def test_relinked_forgery_without_rehash_is_detected():
    _, events = _log_bytes(3)
    forged = ReviewEvent(**{**events[1].__dict__, "payload": {"n": 99, "text": "ü"}})
    data = b"".join(e.to_line() for e in (events[0], forged, events[2]))
    with pytest.raises(ChainBroken) as info:
        verify_chain(data)
    assert info.value.seq == 2


def test_truncated_tail_is_detected():
    data, _ = _log_bytes(3)
    with pytest.raises(ChainBroken):
        verify_chain(data[:-10])
    with pytest.raises(ChainBroken):
        verify_chain(data[:-1])


def test_event_log_on_disk_round_trip(tmp_path):
    _, events = _log_bytes(3)
    log = EventLog(str(tmp_path / "events.jsonl"))
    assert log.events() == []
    for event in events:
        log.append(event)
    assert log.events() == events
    assert EventLog(str(tmp_path / "events.jsonl")).raw_bytes() == b"".join(e.to_line() for e in events)


def test_replay_of_engine_log_matches_live_case(driver_for):
    driver = driver_for()
    case = driver.to_state(CaseState.PUBLISHED)
    replayed = replay(driver.engine.log_of(case))
    assert replayed.to_dict() == case.to_dict()
    assert replayed.state_trail == list(HAPPY_PATH)


def test_replay_rejects_illegal_event_order(driver_for):
    driver = driver_for()
    case = driver.to_state(CaseState.UNDER_REVIEW)
    events = driver.engine.log_of(case).events()
    # a publish right after review starts is well-chained but not legal
    bogus = chain_event(events[-1], case.case_id, Role.SECRETARIAT, "secretariat", "published",
                        {"published_at": "2019-03-02T00:00:00Z", "report_digest": "0" * 64},
                        "2019-03-02T00:00:00Z")
    with pytest.raises(ChainBroken):
        replay(events + [bogus])


def test_replay_of_empty_log_fails():
    with pytest.raises(ChainBroken):
        replay(b"")
