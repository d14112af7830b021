"""Calls, cells, handover buffers, traffic and policy configuration."""

from __future__ import annotations

import bisect
import enum
import itertools
import math
from dataclasses import dataclass, field

from .kernel import RngStream, TimedEvent, sample_exp

CELLS = (1, 2)


def other_cell(cell: int) -> int:
    if cell not in CELLS:
        raise ValueError(f"unknown cell {cell!r}")
    return 3 - cell


class ConfigError(ValueError):
    """Invalid traffic, policy or experiment configuration."""


@dataclass(frozen=True)
class TrafficConfig:
    """Traffic parameters of one cell; both cells share them.

    ``mu_d`` is the dwell *rate* (1 / mean dwell time) and ``delta_h`` the
    holding rate (1 / mean holding time). Defaults: 1 call/s, 120 s mean
    dwell, 240 s mean holding, 10 s mean handover-region transit.
    With ``dwell_enabled`` false calls never leave their home cell.
    """

    lambda_nc: float = 1.0
    mu_d: float = 1.0 / 120.0
    delta_h: float = 1.0 / 240.0
    region_deadline_mean: float = 10.0
    dwell_enabled: bool = True

    def __post_init__(self) -> None:
        for name in ("lambda_nc", "mu_d", "delta_h", "region_deadline_mean"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {value!r}")

    @property
    def deadline_rate(self) -> float:
        return 1.0 / self.region_deadline_mean


class PriorityRule(str, enum.Enum):
    URGENCY_DEADLINE = "urgency"
    RANDOM_SNR = "snr"
    FIFO = "fifo"


class BlockedBehavior(str, enum.Enum):
    DEPART = "depart"
    RETRY = "retry"


@dataclass(frozen=True)
class PolicyConfig:
    """The handover scheme under test.

    ``literal_step6`` blocks a new call whenever a handover call is waiting
    for the cell, even if a channel is free. With it off only channel
    availability matters. ``eager_exchange`` tries an exchange before
    enqueueing instead of only when the own buffer is full.
    """

    label: str = "exchange"
    exchange_enabled: bool = True
    buffer_capacity: int = 2
    blocked_call_behavior: BlockedBehavior = BlockedBehavior.DEPART
    retry_delay: float = 5.0
    retry_max_attempts: int = 1
    priority_rule: PriorityRule = PriorityRule.URGENCY_DEADLINE
    literal_step6: bool = True
    eager_exchange: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.buffer_capacity, int) or self.buffer_capacity < 0:
            raise ConfigError(f"buffer_capacity must be a non-negative integer, got {self.buffer_capacity!r}")
        if self.blocked_call_behavior is BlockedBehavior.RETRY:
            if not self.retry_delay > 0:
                raise ConfigError(f"retry_delay must be positive, got {self.retry_delay!r}")
            if not (isinstance(self.retry_max_attempts, int) and self.retry_max_attempts >= 1):
                raise ConfigError(f"retry_max_attempts must be >= 1, got {self.retry_max_attempts!r}")

    def with_capacity(self, q: int) -> "PolicyConfig":
        return PolicyConfig(**{**self.__dict__, "buffer_capacity": q})


def standard_policy(name: str, buffer_capacity: int = 2, **overrides) -> PolicyConfig:
    """The three compared schemes: ``exchange``, ``buffered``, ``conventional``."""
    if name == "exchange":
        return PolicyConfig(name, True, buffer_capacity, **overrides)
    if name == "buffered":
        return PolicyConfig(name, False, buffer_capacity, **overrides)
    if name == "conventional":
        return PolicyConfig(name, False, 0, **overrides)
    raise ConfigError(f"unknown policy {name!r} (expected exchange, buffered or conventional)")


class CallState(enum.Enum):
    PENDING = "pending"  # constructed, not yet admitted
    ACTIVE = "active"
    QUEUED = "queued_for_handover"
    COMPLETED = "completed"
    BLOCKED = "blocked"
    FORCED = "forced_terminated"


_ids = itertools.count(1)


@dataclass(eq=False, slots=True)
class CallRecord:
    id: int
    home_cell: int
    serving_cell: int
    t_h: float
    holding_expiry: float
    dwell_expiry: float
    snr: float = 0.0
    born: float = 0.0
    direction: tuple[int, int] | None = None
    priority: float = 0.0
    deadline: float = math.inf
    state: CallState = CallState.PENDING
    attempts: int = 1
    next_dwell: float = 0.0
    # handover failed without recourse; waits on its old channel until region exit
    doomed: bool = False
    holding_event: TimedEvent | None = None
    dwell_event: TimedEvent | None = None
    deadline_event: TimedEvent | None = None

    def __repr__(self) -> str:
        return f"Call#{self.id}({self.state.value}, cell={self.serving_cell})"


def new_call(clock: float, cell: int, traffic: TrafficConfig, rng: RngStream,
             call_id: int | None = None) -> CallRecord:
    """Draw holding time, first dwell and an SNR rank for a fresh call."""
    t_h = sample_exp(rng, traffic.delta_h)
    dwell = sample_exp(rng, traffic.mu_d)
    snr = rng.uniform()
    dwell_expiry = clock + dwell if traffic.dwell_enabled else math.inf
    return CallRecord(
        id=next(_ids) if call_id is None else call_id,
        home_cell=cell,
        serving_cell=cell,
        t_h=t_h,
        holding_expiry=clock + t_h,
        dwell_expiry=dwell_expiry,
        snr=snr,
        born=clock,
    )


def rank_key(call: CallRecord, rule: PriorityRule) -> float:
    """Smaller key is served first."""
    if rule is PriorityRule.URGENCY_DEADLINE:
        return call.deadline
    if rule is PriorityRule.RANDOM_SNR:
        return -call.snr
    return 0.0


@dataclass
class HandoverBuffer:
    """Outbound handover queue q_ij for calls leaving cell i towards cell j."""

    direction: tuple[int, int]
    capacity: int
    rule: PriorityRule = PriorityRule.URGENCY_DEADLINE
    _entries: list[tuple[float, int, CallRecord]] = field(default_factory=list, repr=False)
    _seq: int = field(default=0, repr=False)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return (call for _, _, call in self._entries)

    def __contains__(self, call: CallRecord) -> bool:
        return any(c is call for _, _, c in self._entries)

    @property
    def full(self) -> bool:
        return len(self._entries) >= self.capacity

    def push(self, call: CallRecord) -> int:
        """Insert by rank (ties FIFO); returns the 0-based position."""
        if self.full:
            raise OverflowError(f"buffer {self.direction} is full ({self.capacity})")
        call.priority = rank_key(call, self.rule)
        item = (call.priority, self._seq, call)
        self._seq += 1
        pos = bisect.bisect_right(self._entries, item[:2], key=lambda e: e[:2])
        self._entries.insert(pos, item)
        return pos

    def head(self) -> CallRecord | None:
        return self._entries[0][2] if self._entries else None

    def pop_head(self) -> CallRecord:
        return self._entries.pop(0)[2]

    def remove(self, call: CallRecord) -> None:
        for k, (_, _, c) in enumerate(self._entries):
            if c is call:
                del self._entries[k]
                return
        raise KeyError(call)


def queue_rank(buffer: HandoverBuffer, priority_rule: PriorityRule | None = None) -> list[CallRecord]:
    """Buffer entries from highest to lowest priority; ties keep insertion order."""
    rule = buffer.rule if priority_rule is None else priority_rule
    ordered = sorted(buffer._entries, key=lambda e: e[1])
    return [c for c in sorted((c for _, _, c in ordered), key=lambda c: rank_key(c, rule))]


@dataclass
class CellState:
    cell_id: int
    channels: int
    out_buffer: HandoverBuffer
    busy: int = 0

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels!r}")

    @property
    def free(self) -> int:
        return self.channels - self.busy
