#!/usr/bin/env python3
"""
Tests for the event queue, the reply-rate model and exchange timing.
"""

import pytest

from frames import FrameError, FrameKind, PhyTiming
from medium import (
    DEFAULT_REPLY_RATES,
    EventQueue,
    ReplyRateTable,
    ScheduleError,
    SeededRNG,
    deliver,
    exchange_cycle_us,
    exchanges_per_second,
    expected_backoff_us,
    run_until,
    sampled_backoff_us,
)


def _recorder(log):
    def handler(t, payload):
        log.append((t, payload))
    return handler


def test_events_dispatch_in_time_order():
    queue = EventQueue()
    log = []
    for t, name in [(30.0, "c"), (10.0, "a"), (20.0, "b")]:
        queue.schedule(t, name, _recorder(log))
    assert run_until(queue, 100.0) == 3
    assert log == [(10.0, "a"), (20.0, "b"), (30.0, "c")]


def test_equal_times_keep_insertion_order():
    queue = EventQueue()
    log = []
    for name in "xyz":
        queue.schedule(5.0, name, _recorder(log))
    queue.run_until(5.0)
    assert [p for _, p in log] == ["x", "y", "z"]


def test_run_until_is_inclusive_and_stops():
    queue = EventQueue()
    log = []
    queue.schedule(10.0, "at-end", _recorder(log))
    queue.schedule(10.5, "later", _recorder(log))
    assert queue.run_until(10.0) == 1
    assert queue.now == 10.0
    assert queue.run_until(20.0) == 1


def test_empty_queue_advances_clock():
    queue = EventQueue()
    assert queue.run_until(50.0) == 0
    assert queue.now == 50.0


def test_schedule_in_past_rejected():
    queue = EventQueue()
    queue.run_until(100.0)
    with pytest.raises(ScheduleError):
        queue.schedule(50.0, "late")
    with pytest.raises(ScheduleError):
        queue.run_until(10.0)


def test_handlers_can_schedule_more_events():
    queue = EventQueue()
    log = []

    def chain(t, n):
        log.append(t)
        if n > 0:
            queue.schedule(t + 10.0, n - 1, chain)

    queue.schedule(0.0, 3, chain)
    queue.run_until(1000.0)
    assert log == [0.0, 10.0, 20.0, 30.0]


def test_reply_rate_table_endpoints_and_clamping():
    assert DEFAULT_REPLY_RATES.probability_at(5.0) == pytest.approx(0.97)
    assert DEFAULT_REPLY_RATES.probability_at(150.0) == pytest.approx(0.73)
    assert DEFAULT_REPLY_RATES.probability_at(0.0) == pytest.approx(0.97)
    assert DEFAULT_REPLY_RATES.probability_at(400.0) == pytest.approx(0.73)
    assert DEFAULT_REPLY_RATES.probability_at(125.0) == pytest.approx(0.86)


def test_reply_rate_table_validation():
    with pytest.raises(ValueError):
        ReplyRateTable(((10.0, 0.5), (5.0, 0.9)))
    with pytest.raises(ValueError):
        ReplyRateTable(((10.0, 1.5),))
    with pytest.raises(ValueError):
        ReplyRateTable(())


@pytest.mark.parametrize("distance,expected", [(5.0, 0.97), (150.0, 0.73)])
def test_delivery_frequency_matches_table(distance, expected):
    rng = SeededRNG(42)
    hits = sum(deliver(distance, DEFAULT_REPLY_RATES, rng) for _ in range(10_000))
    assert hits / 10_000 == pytest.approx(expected, abs=0.02)


def test_delivery_is_seeded():
    rng1, rng2 = SeededRNG(7), SeededRNG(7)
    seq1 = [deliver(150.0, DEFAULT_REPLY_RATES, rng1) for _ in range(200)]
    seq2 = [deliver(150.0, DEFAULT_REPLY_RATES, rng2) for _ in range(200)]
    assert seq1 == seq2


def test_negative_distance_rejected():
    with pytest.raises(ValueError):
        deliver(-1.0, DEFAULT_REPLY_RATES, SeededRNG(0))


def test_fork_is_deterministic():
    assert SeededRNG(3).fork().random() == SeededRNG(3).fork().random()


def test_backoff():
    phy = PhyTiming()
    assert expected_backoff_us(phy) == pytest.approx(310.0)
    rng = SeededRNG(1)
    for _ in range(500):
        b = sampled_backoff_us(phy, rng)
        assert 0 <= b <= phy.cw_min * phy.slot_us
        assert b % phy.slot_us == 0


def test_exchange_cycle_bar_one_mbps():
    assert exchange_cycle_us(FrameKind.BLOCK_ACK_REQUEST, 1.0, PhyTiming()) == pytest.approx(1202.0)
    assert exchanges_per_second(FrameKind.BLOCK_ACK_REQUEST, 1.0, PhyTiming()) == pytest.approx(1e6 / 1202.0)


def test_exchange_cycle_needs_a_response():
    with pytest.raises(FrameError, match="no response"):
        exchange_cycle_us(FrameKind.CTS, 1.0, PhyTiming())
