"""Discrete-event core: virtual clock, event queue, per-node RNG streams.

Time is kept as an integer count of microseconds so that event ordering is
exact and runs never accumulate float drift.  Events with equal fire times
run in insertion order, which makes every run with the same seed replay
identically.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Callable

US_PER_S = 1_000_000

# Simulation timestamps and durations are integer microseconds.
SimTime = int


def to_us(seconds: float) -> SimTime:
    """Convert a duration in seconds to integer microseconds."""
    return round(seconds * US_PER_S)


def to_seconds(t: SimTime) -> float:
    return t / US_PER_S


def fmt_time(t: SimTime) -> str:
    """Exact decimal rendering of a timestamp, e.g. ``12.345678``."""
    sign = "-" if t < 0 else ""
    t = abs(t)
    return f"{sign}{t // US_PER_S}.{t % US_PER_S:06d}"


@dataclass(slots=True)
class Event:
    """A scheduled callback; also acts as its own cancellation handle."""

    fire_at: SimTime
    seq: int
    target: str
    kind: str
    callback: Callable[[], None] | None
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True
        self.callback = None


@dataclass
class Simulator:
    """Virtual clock plus event queue.

    ``seed`` feeds the per-node RNG streams: every node draws jitter from its
    own stream derived from ``(seed, node_id)``, so adding a node to a
    scenario does not perturb the draws of existing nodes.
    """

    seed: int = 0
    _now: SimTime = 0
    _seq: int = 0
    _queue: list[tuple[SimTime, int, Event]] = field(default_factory=list)
    _rngs: dict[str, random.Random] = field(default_factory=dict)

    def now(self) -> SimTime:
        return self._now

    def schedule(
        self,
        delay: SimTime,
        callback: Callable[[], None],
        *,
        target: str = "",
        kind: str = "",
    ) -> Event:
        """Schedule ``callback`` after ``delay`` microseconds; returns a handle.

        A zero delay fires at the current time but strictly after the event
        being processed now.  Negative delays are rejected.
        """
        if delay < 0:
            raise ValueError(f"cannot schedule {delay} us in the past")
        event = Event(self._now + delay, self._seq, target, kind, callback)
        self._seq += 1
        heappush(self._queue, (event.fire_at, event.seq, event))
        return event

    def run_until(self, end: SimTime) -> None:
        """Process every event with ``fire_at <= end``; clock lands on ``end``."""
        if end < self._now:
            raise ValueError(f"run_until({end}) is before now ({self._now})")
        while self._queue and self._queue[0][0] <= end:
            fire_at, _, event = heappop(self._queue)
            if event.cancelled:
                continue
            self._now = fire_at
            callback = event.callback
            event.callback = None
            assert callback is not None
            callback()
        self._now = end

    def node_rng(self, node_id: str) -> random.Random:
        """Dedicated RNG stream for one node, stable across processes."""
        rng = self._rngs.get(node_id)
        if rng is None:
            # str seeding hashes via sha512, so this does not depend on
            # PYTHONHASHSEED the way hash() would.
            rng = random.Random(f"{self.seed}/{node_id}")
            self._rngs[node_id] = rng
        return rng

    def pending(self) -> int:
        return sum(1 for _, _, e in self._queue if not e.cancelled)
