"""Deterministic discrete-event engine.

Time is an integer count of microseconds. Events are ordered by
``(fire_at, seq)`` where ``seq`` is the insertion counter, so two events
scheduled for the same instant always fire in the order they were
scheduled.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Any, Callable

US_PER_S = 1_000_000


def seconds(value: float) -> int:
    """Convert seconds to integer simulation time (microseconds)."""
    return int(round(value * US_PER_S))


def ms(value: float) -> int:
    return int(round(value * 1000))


def to_seconds(t: int) -> float:
    return t / US_PER_S


class SimulationError(RuntimeError):
    """Fatal contract violation inside a running simulation."""

    def __init__(self, message: str, at: int | None = None):
        if at is not None:
            message = f"t={to_seconds(at):.6f}s: {message}"
        super().__init__(message)
        self.at = at


class EventHandle:
    """Reference to a scheduled event; used to cancel timers."""

    __slots__ = ("fire_at", "seq", "kind", "state")

    PENDING, FIRED, CANCELLED = 0, 1, 2

    def __init__(self, fire_at: int, seq: int, kind: str):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self.state = EventHandle.PENDING

    @property
    def pending(self) -> bool:
        return self.state == EventHandle.PENDING

    def __repr__(self) -> str:
        return f"EventHandle({self.kind!r}, fire_at={self.fire_at}, seq={self.seq})"


@dataclass
class RunSummary:
    """What a call to :meth:`Simulator.run_until` did."""

    start: int
    end: int
    events_processed: int


class Simulator:
    """Virtual clock, future-event set and seeded RNG for one simulation.

    The RNG is :class:`random.Random` (Mersenne Twister) seeded once, so a
    given seed always yields the same draw sequence.
    """

    def __init__(self, seed: int = 0, trace: bool = False):
        self.now = 0
        self.seed = seed
        self.rng = random.Random(seed)
        self._queue: list[tuple[int, int, EventHandle]] = []
        self._seq = 0
        self.events_processed = 0
        self.trace: list[tuple[int, int, str]] | None = [] if trace else None

    def schedule(self, fire_at: int, callback: Callable[..., Any], *args: Any, kind: str = "") -> EventHandle:
        """Schedule a cancellable event."""
        if fire_at < self.now:
            raise SimulationError(
                f"cannot schedule {kind or callback.__name__!r} in the past (fire_at={fire_at})", self.now
            )
        seq = self._seq
        self._seq = seq + 1
        handle = EventHandle(fire_at, seq, kind or callback.__name__)
        heapq.heappush(self._queue, (fire_at, seq, callback, args, handle))
        return handle

    def schedule_in(self, delay: int, callback: Callable[..., Any], *args: Any, kind: str = "") -> EventHandle:
        return self.schedule(self.now + delay, callback, *args, kind=kind)

    def post(self, fire_at: int, callback: Callable[..., Any], *args: Any) -> None:
        """Schedule an event that will never be cancelled (no handle is created)."""
        if fire_at < self.now:
            raise SimulationError(f"cannot schedule {callback.__name__!r} in the past (fire_at={fire_at})", self.now)
        seq = self._seq
        self._seq = seq + 1
        heapq.heappush(self._queue, (fire_at, seq, callback, args, None))

    def cancel(self, handle: EventHandle | None) -> bool:
        """Make a pending event inert. Returns False if it already fired or was cancelled."""
        if handle is None or handle.state != EventHandle.PENDING:
            return False
        handle.state = EventHandle.CANCELLED
        return True

    def __len__(self) -> int:
        return sum(1 for entry in self._queue if entry[4] is None or entry[4].state == EventHandle.PENDING)

    def run_until(self, t_end: int) -> RunSummary:
        if t_end < self.now:
            raise SimulationError(f"run_until({t_end}) is before the current time", self.now)
        start, processed = self.now, 0
        queue = self._queue
        trace = self.trace
        pending, fired = EventHandle.PENDING, EventHandle.FIRED
        pop = heapq.heappop
        while queue and queue[0][0] <= t_end:
            fire_at, seq, callback, args, handle = pop(queue)
            if handle is not None:
                if handle.state != pending:
                    continue
                handle.state = fired
            self.now = fire_at
            if trace is not None:
                trace.append((fire_at, seq, handle.kind if handle is not None else callback.__name__))
            callback(*args)
            processed += 1
        self.now = t_end
        self.events_processed += processed
        return RunSummary(start, t_end, processed)
