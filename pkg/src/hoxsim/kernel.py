"""Discrete-event engine: event calendar, simulation clock and seeded variates."""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field

import numpy as np


class EventKind(enum.IntEnum):
    NEW_ARRIVAL = 0
    HOLDING_EXPIRY = 1
    DWELL_EXPIRY = 2
    REGION_DEADLINE = 3
    RETRY_ATTEMPT = 4
    HORIZON_END = 5


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class CalendarDrained(Exception):
    """Signals that no live event remains in the calendar."""


@dataclass(eq=False, slots=True)
class TimedEvent:
    fire_time: float
    kind: EventKind
    subject: object = None
    sequence: int = -1
    cancelled: bool = False

    def __repr__(self) -> str:
        return f"TimedEvent({self.fire_time:.6g}, {self.kind.name}, {self.subject!r}, seq={self.sequence})"


class Calendar:
    """Time-ordered event list with FIFO tie-breaking and lazy cancellation.

    Events are ordered by ``(fire_time, sequence)`` where ``sequence`` is an
    insertion counter, so simultaneous events pop in the order they were
    scheduled. ``schedule`` returns the event itself, which doubles as the
    cancellation handle.
    """

    def __init__(self, start: float = 0.0) -> None:
        self._heap: list[tuple[float, int, TimedEvent]] = []
        self._seq = 0
        self._live = 0
        self.clock = start

    def __len__(self) -> int:
        return self._live

    def schedule(self, event: TimedEvent) -> TimedEvent:
        if not event.fire_time >= self.clock:
            raise SchedulingError(
                f"event {event!r} scheduled in the past (clock={self.clock!r})"
            )
        event.sequence = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (event.fire_time, event.sequence, event))
        self._live += 1
        return event

    def at(self, fire_time: float, kind: EventKind, subject: object = None) -> TimedEvent:
        return self.schedule(TimedEvent(fire_time, kind, subject))

    def cancel(self, event: TimedEvent | None) -> None:
        if event is None or event.cancelled:
            return
        event.cancelled = True
        self._live -= 1

    def pop_next(self) -> TimedEvent:
        heap = self._heap
        while heap:
            fire_time, _, event = heapq.heappop(heap)
            if event.cancelled:
                continue
            self._live -= 1
            # a popped event can no longer be cancelled
            event.cancelled = True
            self.clock = fire_time
            return event
        raise CalendarDrained


def exp_from_uniform(u: float, rate: float) -> float:
    """Inverse-CDF exponential variate, ``-ln(u)/rate`` for ``u`` in (0, 1]."""
    if not rate > 0:
        raise ValueError(f"exponential rate must be positive, got {rate!r}")
    return -math.log(u) / rate


@dataclass
class RngStream:
    """Seeded uniform stream for one replication.

    Uniforms are generated in blocks from a PCG64 generator and handed out
    one at a time. The ``(seed, stream_id)`` pair fully determines the
    sequence; ``spawn`` derives statistically independent child streams.
    """

    seed: int
    stream_id: int | tuple[int, ...] = 0
    block: int = 4096
    _buf: list[float] = field(default_factory=list, init=False, repr=False)
    _pos: int = field(default=0, init=False, repr=False)

    def __post_init__(self) -> None:
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        self._seq = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, child: int) -> "RngStream":
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        return RngStream(self.seed, key + (child,), self.block)

    def uniform(self) -> float:
        """Uniform variate on (0, 1]."""
        if self._pos >= len(self._buf):
            # 1 - [0, 1) keeps the log finite
            self._buf = (1.0 - self._gen.random(self.block)).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def sample_exp(rng: RngStream, rate: float) -> float:
    if not rate > 0:
        raise ValueError(f"exponential rate must be positive, got {rate!r}")
    return -math.log(rng.uniform()) / rate
