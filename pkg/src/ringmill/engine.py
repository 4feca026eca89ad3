"""Deterministic discrete-event engine.

All simulation time is integer microseconds.  Events fire in
(fire_time, sequence) order, so two events scheduled for the same
microsecond are processed in the order they were scheduled.  Nothing in
here touches the wall clock; a run is a pure function of the scenario
and its seeds.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable

SimTime = int  # microseconds since simulation start

US_PER_MS = 1_000
US_PER_S = 1_000_000


class CausalityError(ValueError):
    """Raised when an event is scheduled before the current clock."""


@dataclass(slots=True)
class EventRecord:
    """A scheduled event: when it fires, its tiebreak sequence and what it does."""

    fire_time: SimTime
    sequence: int
    action: Callable[[], None]
    component: str = ""
    kind: str = ""
    details: str = ""


@dataclass(slots=True)
class RunSummary:
    events_processed: int
    clock: SimTime


class Simulator:
    """Single-threaded event loop owning one simulation's clock and queue.

    Instances are independent; running several in parallel processes or
    threads is safe as long as each is driven by one caller only.
    """

    def __init__(self, trace: Callable[[str], None] | None = None):
        self._clock: SimTime = 0
        self._seq = 0
        self._heap: list[tuple[SimTime, int, EventRecord]] = []
        self._cancelled: set[int] = set()
        self._events_processed = 0
        self.trace = trace

    @property
    def now(self) -> SimTime:
        return self._clock

    def schedule(
        self,
        fire_time: SimTime,
        action: Callable[[], None],
        *,
        component: str = "",
        kind: str = "",
        details: str = "",
    ) -> int:
        """Enqueue an event and return a cancellable event id."""
        if fire_time < self._clock:
            raise CausalityError(
                f"causality violation: cannot schedule at t={fire_time} "
                f"when clock is {self._clock}"
            )
        self._seq += 1
        record = EventRecord(int(fire_time), self._seq, action, component, kind, details)
        heapq.heappush(self._heap, (record.fire_time, record.sequence, record))
        return record.sequence

    def schedule_in(self, delay: SimTime, action: Callable[[], None], **kw) -> int:
        return self.schedule(self._clock + delay, action, **kw)

    def cancel(self, event_id: int) -> bool:
        """Mark a pending event dead.  Returns False for unknown/fired ids."""
        if event_id <= 0 or event_id > self._seq:
            return False
        self._cancelled.add(event_id)
        return True

    def run_until(self, t_end: SimTime) -> RunSummary:
        """Process every event with fire_time <= t_end; clock ends at t_end."""
        heap = self._heap
        cancelled = self._cancelled
        while heap and heap[0][0] <= t_end:
            fire_time, seq, record = heapq.heappop(heap)
            if seq in cancelled:
                cancelled.discard(seq)
                continue
            self._clock = fire_time
            self._events_processed += 1
            if self.trace is not None:
                self.trace(
                    f"t={fire_time} component={record.component or '-'} "
                    f"kind={record.kind or '-'} details={record.details or '-'}"
                )
            record.action()
        self._clock = t_end
        return RunSummary(self._events_processed, self._clock)

    def pending(self) -> int:
        return sum(1 for _, seq, _r in self._heap if seq not in self._cancelled)


# ---------------------------------------------------------------------------
# Seed derivation and per-component RNG streams.

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> int:
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int | str) -> int:
    """Fold integers and labels into one 64-bit seed, stably across platforms.

    Every stochastic component gets its own stream via a distinct label, so
    adding a component to a scenario never disturbs another component's draws.
    """
    state = 0x5DEECE66D
    for part in parts:
        if isinstance(part, str):
            for byte in part.encode("utf-8"):
                state = _splitmix64(state ^ byte)
        else:
            state = _splitmix64(state ^ (int(part) & _MASK64))
    return _splitmix64(state)


@dataclass(frozen=True)
class RngStream:
    """An independent, reproducible random stream keyed by (seed, stream id)."""

    seed: int
    stream_id: int | str = 0

    def generator(self) -> random.Random:
        return random.Random(derive_seed(self.seed, self.stream_id))


def component_rng(seed: int, *stream: int | str) -> random.Random:
    """Seeded generator for one named component of one run."""
    return random.Random(derive_seed(seed, *stream))
