import logging
import random
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence, Tuple

import numpy as np
import simpy

from frames import (
    FrameError,
    FrameKind,
    PhyTiming,
    RESPONSES,
    airtime_us,
    response_bitrate,
)

logger = logging.getLogger(__name__)


class ScheduleError(ValueError):
    """Raised when an event is scheduled in the past or the clock would run backwards."""


class SeededRNG:
    """Wrapper around random.Random for deterministic simulation."""

    def __init__(self, seed: int):
        self._rng = random.Random(seed)
        self._seed = seed

    @property
    def seed(self) -> int:
        return self._seed

    def random(self) -> float:
        return self._rng.random()

    def uniform(self, a: float, b: float) -> float:
        return self._rng.uniform(a, b)

    def randint(self, a: int, b: int) -> int:
        return self._rng.randint(a, b)

    def fork(self) -> "SeededRNG":
        """Create a child RNG with a derived seed for sub-tasks."""
        return SeededRNG(self._rng.randint(0, 2**31 - 1))


@dataclass(frozen=True)
class ReplyRateTable:
    breakpoints: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if not self.breakpoints:
            raise ValueError("Reply-rate table needs at least one breakpoint")
        distances = [d for d, _ in self.breakpoints]
        if any(b <= a for a, b in zip(distances, distances[1:])):
            raise ValueError(f"Reply-rate distances must be strictly increasing: {distances}")
        for d, p in self.breakpoints:
            if d < 0 or not 0.0 <= p <= 1.0:
                raise ValueError(f"Bad reply-rate breakpoint ({d}, {p})")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "ReplyRateTable":
        return cls(tuple((float(d), float(p)) for d, p in rows))

    def probability_at(self, distance_m: float) -> float:
        distances = [d for d, _ in self.breakpoints]
        probs = [p for _, p in self.breakpoints]
        # np.interp clamps outside the end breakpoints
        return float(np.interp(distance_m, distances, probs))


# 97% at 5 m, almost all at 100 m, 73% at 150 m
DEFAULT_REPLY_RATES = ReplyRateTable(((5.0, 0.97), (100.0, 0.99), (150.0, 0.73)))


class EventQueue:
    """Timestamped event queue on top of a manually stepped simpy environment.

    Times are µs. Events at equal timestamps dispatch in insertion order.
    """

    def __init__(self, start_us: float = 0.0):
        self.env = simpy.Environment(initial_time=start_us)
        self.dispatched = 0

    @property
    def now(self) -> float:
        return self.env.now

    def schedule(self, at_us: float, payload: Any = None,
                 handler: Optional[Callable[[float, Any], None]] = None) -> simpy.events.Timeout:
        if at_us < self.env.now:
            raise ScheduleError(f"Cannot schedule at {at_us} µs, clock is at {self.env.now} µs")
        event = self.env.timeout(at_us - self.env.now, value=payload)

        def _dispatch(evt):
            self.dispatched += 1
            if handler is not None:
                handler(at_us, evt.value)

        event.callbacks.append(_dispatch)
        return event

    def run_until(self, t_end: float) -> int:
        if t_end < self.env.now:
            raise ScheduleError(f"t_end {t_end} µs is before the clock ({self.env.now} µs)")
        before = self.dispatched
        while self.env.peek() <= t_end:
            self.env.step()
        if t_end > self.env.now:
            self.env.run(until=t_end)
        return self.dispatched - before


def run_until(queue: EventQueue, t_end: float) -> int:
    return queue.run_until(t_end)


def deliver(distance_m: float, table: ReplyRateTable, rng: SeededRNG) -> bool:
    if distance_m < 0:
        raise ValueError(f"Distance must be non-negative, got {distance_m}")
    return rng.random() < table.probability_at(distance_m)


def expected_backoff_us(phy: PhyTiming) -> float:
    return phy.cw_min / 2 * phy.slot_us


def sampled_backoff_us(phy: PhyTiming, rng: SeededRNG) -> float:
    return rng.randint(0, phy.cw_min) * phy.slot_us


def exchange_cycle_us(query: FrameKind, bitrate: float, phy: PhyTiming, payload_bytes: int = 0) -> float:
    """DIFS + mean backoff + query + SIFS + response, one saturated exchange"""
    response = RESPONSES.get(query)
    if response is None:
        raise FrameError(f"{query.value} has no response, cannot form an exchange")
    query_air = airtime_us(query, bitrate, phy, payload_bytes)
    response_air = airtime_us(response, response_bitrate(query, bitrate, phy), phy)
    return phy.difs_us + expected_backoff_us(phy) + query_air + phy.sifs_us + response_air


def exchanges_per_second(query: FrameKind, bitrate: float, phy: PhyTiming, payload_bytes: int = 0) -> float:
    return 1e6 / exchange_cycle_us(query, bitrate, phy, payload_bytes)
