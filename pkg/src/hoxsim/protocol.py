"""Two-cell handover exchange scheme driven by the event kernel.

A call occupies one channel in its serving cell. When its dwell time runs
out it asks the other cell for a channel:

* a free channel in the target is taken at once and the old one released;
* otherwise the call waits in its outbound buffer, still holding the old
  channel, until a target channel frees up or its region deadline expires;
* if that buffer is full too, the call may swap channels with the
  top-ranked call queued in the opposite direction (exchange). Without a
  partner it keeps the old channel until the deadline and is then dropped.

Released channels go to the highest-ranked waiting handover call before any
new call; serving that call frees a channel in the other cell, which can in
turn serve the opposite buffer.
"""

from __future__ import annotations

import collections
import enum
import logging
import math
from dataclasses import dataclass, field

from .kernel import Calendar, EventKind, RngStream, TimedEvent, sample_exp
from .metrics import MetricsLedger
from .model import (
    CELLS,
    BlockedBehavior,
    CallRecord,
    CallState,
    CellState,
    HandoverBuffer,
    PolicyConfig,
    TrafficConfig,
    new_call,
    other_cell,
)
from .rules import BlockReason, HandoverCase, admission_block, handover_case, serves_on_release

log = logging.getLogger(__name__)


class InvariantViolation(AssertionError):
    """A safety or accounting invariant failed; ``trace`` holds recent events."""

    def __init__(self, message: str, trace: list[str] | None = None) -> None:
        super().__init__(message)
        self.trace = trace or []

    def __reduce__(self):
        return (type(self), (self.args[0], self.trace))

    def dump(self) -> str:
        return "\n".join([str(self), "recent events:"] + ["  " + line for line in self.trace])


class ExchangeRefused(ValueError):
    """The proposed partner cannot swap channels with the requester."""


@dataclass(frozen=True)
class AdmissionOutcome:
    admitted: bool
    reason: BlockReason | None = None


class HandoverResult(enum.Enum):
    SUCCESS_FREE_CHANNEL = "success_free_channel"
    ENQUEUED = "enqueued"
    SUCCESS_BY_EXCHANGE = "success_by_exchange"
    FAILURE_NO_RECOURSE = "failure_no_recourse"


@dataclass(frozen=True)
class HandoverOutcome:
    result: HandoverResult
    position: int | None = None
    deadline: float | None = None
    partner: int | None = None


@dataclass
class ServiceAction:
    """Calls moved out of buffers by one channel release, in service order."""

    served: list[CallRecord] = field(default_factory=list)


@dataclass
class ReplicationResult:
    ledger: MetricsLedger
    audit: MetricsLedger
    in_flight: int
    seed: int
    replication: int
    trace: list[str] | None = None


class World:
    """State of one replication: two cells, their buffers, calendar and counters.

    Counters accumulate in ``audit`` over the whole run, which is what the
    accounting identities are checked against. ``ledger`` is the part of it
    after the warm-up time, formed at the horizon as a difference against a
    snapshot taken when the clock crosses the warm-up.
    """

    def __init__(self, traffic: TrafficConfig, policy: PolicyConfig, channels: int = 10,
                 seed: int = 0, replication: int = 0, horizon: float = 1e5,
                 warmup_fraction: float = 0.1, record_trace: bool = False,
                 check_invariants: bool = False) -> None:
        if not horizon > 0:
            raise ValueError(f"horizon must be positive, got {horizon!r}")
        if not 0 <= warmup_fraction < 1:
            raise ValueError(f"warmup_fraction must be in [0, 1), got {warmup_fraction!r}")
        self.traffic = traffic
        self.policy = policy
        self.channels = channels
        self.seed = seed
        self.replication = replication
        self.horizon = horizon
        self.warmup = warmup_fraction * horizon
        self.cells = {
            c: CellState(c, channels, HandoverBuffer((c, other_cell(c)), policy.buffer_capacity,
                                                     policy.priority_rule))
            for c in CELLS
        }
        self.calendar = Calendar()
        root = RngStream(seed, replication)
        self.arrival_rng = {c: root.spawn(c) for c in CELLS}
        self.mobility_rng = root.spawn(len(CELLS) + 1)
        self.audit = MetricsLedger()
        self.ledger: MetricsLedger | None = None
        self._snapshot: MetricsLedger | None = None
        self.calls: dict[int, CallRecord] = {}
        self.check_every_event = check_invariants
        self._next_id = 1
        self._busy_total = 0
        self._last_t = 0.0
        self._started = False
        self._recent: collections.deque[TimedEvent] = collections.deque(maxlen=64)
        self.trace: list[str] | None = [] if record_trace else None

    # -- bookkeeping -------------------------------------------------------

    def _fail(self, message: str) -> None:
        raise InvariantViolation(f"t={self.calendar.clock:.6f}: {message}",
                                 [self._format(e) for e in self._recent])

    def _advance(self, t: float) -> None:
        if self._snapshot is None and t >= self.warmup:
            self.audit.busy_time += self._busy_total * (self.warmup - self._last_t)
            self._last_t = self.warmup
            self._snapshot = self.audit.copy()
        self.audit.busy_time += self._busy_total * (t - self._last_t)
        self._last_t = t

    def _occupy(self, cell: CellState) -> None:
        cell.busy += 1
        self._busy_total += 1
        if cell.busy > cell.channels:
            self._fail(f"cell {cell.cell_id} busy {cell.busy} exceeds {cell.channels} channels")

    def _vacate(self, cell: CellState) -> None:
        cell.busy -= 1
        self._busy_total -= 1
        if cell.busy < 0:
            self._fail(f"cell {cell.cell_id} busy count went negative")

    def _activate(self, call: CallRecord, cell_id: int) -> None:
        """Make ``call`` active in ``cell_id`` with a fresh dwell period."""
        call.serving_cell = cell_id
        call.state = CallState.ACTIVE
        call.direction = None
        call.doomed = False
        self.calendar.cancel(call.deadline_event)
        call.deadline_event = None
        call.deadline = math.inf
        if self.traffic.dwell_enabled:
            call.dwell_expiry = self.calendar.clock + call.next_dwell
            if call.dwell_expiry < call.holding_expiry:
                call.dwell_event = self.calendar.at(call.dwell_expiry, EventKind.DWELL_EXPIRY, call)

    def _retire(self, call: CallRecord, state: CallState) -> None:
        call.state = state
        self.calendar.cancel(call.holding_event)
        self.calendar.cancel(call.dwell_event)
        self.calendar.cancel(call.deadline_event)
        call.holding_event = call.dwell_event = call.deadline_event = None
        self.calls.pop(call.id, None)

    # -- operations --------------------------------------------------------

    def originate(self, cell_id: int) -> CallRecord:
        call = new_call(self.calendar.clock, cell_id, self.traffic, self.arrival_rng[cell_id],
                        call_id=self._next_id)
        self._next_id += 1
        self.calls[call.id] = call
        self.audit.calls_originated += 1
        return call

    def admit_new_call(self, cell_id: int, call: CallRecord) -> AdmissionOutcome:
        cell = self.cells[cell_id]
        inbound = self.cells[other_cell(cell_id)].out_buffer
        self.audit.new_arrivals += 1
        reason = admission_block(cell.busy, cell.channels, len(inbound), self.policy.literal_step6)
        clock = self.calendar.clock
        if reason is None:
            self._occupy(cell)
            shift = clock - call.born
            call.holding_expiry = clock + call.t_h
            call.dwell_expiry += shift
            call.state = CallState.ACTIVE
            self.audit.admitted_new += 1
            call.holding_event = self.calendar.at(call.holding_expiry, EventKind.HOLDING_EXPIRY, call)
            if call.dwell_expiry < call.holding_expiry:
                self.audit.first_dwell_before_holding += 1
                call.dwell_event = self.calendar.at(call.dwell_expiry, EventKind.DWELL_EXPIRY, call)
            return AdmissionOutcome(True)

        self.audit.blocked_new += 1
        if reason is BlockReason.NO_CHANNEL:
            self.audit.blocked_no_channel += 1
        else:
            self.audit.blocked_queue_nonempty += 1
        policy = self.policy
        if (policy.blocked_call_behavior is BlockedBehavior.RETRY
                and call.attempts <= policy.retry_max_attempts):
            call.attempts += 1
            self.audit.retries += 1
            self.calendar.at(clock + policy.retry_delay, EventKind.RETRY_ATTEMPT, call)
        else:
            self._retire(call, CallState.BLOCKED)
            self.audit.calls_blocked += 1
        return AdmissionOutcome(False, reason)

    def request_handover(self, call: CallRecord, target_cell: int) -> HandoverOutcome:
        src = call.serving_cell
        if target_cell == src or target_cell not in self.cells:
            raise ValueError(f"invalid handover target {target_cell} for {call!r}")
        if call.state is not CallState.ACTIVE or call.doomed:
            raise ValueError(f"{call!r} cannot request a handover")
        clock = self.calendar.clock
        self.audit.handover_requests += 1
        call.dwell_event = None
        # fixed draws per request keep streams aligned across policies
        region_time = sample_exp(self.mobility_rng, self.traffic.deadline_rate)
        call.next_dwell = sample_exp(self.mobility_rng, self.traffic.mu_d)

        source, target = self.cells[src], self.cells[target_cell]
        own, opposite = source.out_buffer, target.out_buffer
        case = handover_case(target.busy, target.channels, len(own), own.capacity, len(opposite),
                             self.policy.exchange_enabled, self.policy.eager_exchange)

        if case is HandoverCase.FREE_CHANNEL:
            self._occupy(target)
            self._activate(call, target_cell)
            self.audit.handover_successes += 1
            self.on_channel_release(src)
            return HandoverOutcome(HandoverResult.SUCCESS_FREE_CHANNEL)

        if case is HandoverCase.EXCHANGE:
            outcome, _ = self.exchange_channels(call, opposite.head())
            return outcome

        call.direction = (src, target_cell)
        call.deadline = clock + region_time
        call.deadline_event = self.calendar.at(call.deadline, EventKind.REGION_DEADLINE, call)
        if case is HandoverCase.ENQUEUE:
            call.state = CallState.QUEUED
            position = own.push(call)
            return HandoverOutcome(HandoverResult.ENQUEUED, position, call.deadline)
        call.doomed = True
        return HandoverOutcome(HandoverResult.FAILURE_NO_RECOURSE, deadline=call.deadline)

    def exchange_channels(self, arriving: CallRecord, partner: CallRecord | None
                          ) -> tuple[HandoverOutcome, HandoverOutcome]:
        """Swap the channels of two calls crossing the region in opposite directions."""
        if not self.policy.exchange_enabled:
            raise ExchangeRefused("exchange is disabled by policy")
        src = arriving.serving_cell
        dst = other_cell(src)
        if (partner is None or partner.state is not CallState.QUEUED
                or partner.serving_cell != dst or partner.direction != (dst, src)):
            raise ExchangeRefused(f"{partner!r} holds no channel in cell {dst} bound for cell {src}")
        before = (self.cells[1].busy, self.cells[2].busy)
        self.cells[dst].out_buffer.remove(partner)
        self._activate(arriving, dst)
        self._activate(partner, src)
        if (self.cells[1].busy, self.cells[2].busy) != before:
            self._fail("exchange changed busy counts")
        self.audit.handover_successes += 2
        self.audit.exchanges += 1
        return (HandoverOutcome(HandoverResult.SUCCESS_BY_EXCHANGE, partner=partner.id),
                HandoverOutcome(HandoverResult.SUCCESS_BY_EXCHANGE, partner=arriving.id))

    def on_channel_release(self, cell_id: int) -> ServiceAction:
        """Free one channel in ``cell_id`` and run the priority-service cascade."""
        action = ServiceAction()
        while True:
            cell = self.cells[cell_id]
            self._vacate(cell)
            inbound = self.cells[other_cell(cell_id)].out_buffer
            if not serves_on_release(len(inbound)):
                return action
            call = inbound.pop_head()
            old = call.serving_cell
            self._occupy(cell)
            self._activate(call, cell_id)
            self.audit.handover_successes += 1
            action.served.append(call)
            cell_id = old

    def on_deadline_expiry(self, call: CallRecord) -> bool:
        """Drop a call that left the handover region unserved; False if stale."""
        if call.state is CallState.QUEUED:
            self.cells[call.serving_cell].out_buffer.remove(call)
        elif not (call.state is CallState.ACTIVE and call.doomed):
            return False
        call.deadline_event = None
        cell_id = call.serving_cell
        self._retire(call, CallState.FORCED)
        self.audit.handover_failures += 1
        self.audit.forced_terminations += 1
        self.on_channel_release(cell_id)
        return True

    def on_holding_expiry(self, call: CallRecord) -> None:
        if call.state is CallState.QUEUED:
            self.cells[call.serving_cell].out_buffer.remove(call)
            self.audit.handover_moot += 1
        elif call.state is CallState.ACTIVE:
            if call.doomed:
                self.audit.handover_moot += 1
        else:
            return
        call.holding_event = None
        cell_id = call.serving_cell
        self._retire(call, CallState.COMPLETED)
        self.audit.completions += 1
        self.on_channel_release(cell_id)

    # -- event loop --------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for c in CELLS:
            gap = sample_exp(self.arrival_rng[c], self.traffic.lambda_nc)
            self.calendar.at(gap, EventKind.NEW_ARRIVAL, c)
        self.calendar.at(self.horizon, EventKind.HORIZON_END)

    @staticmethod
    def _format(event: TimedEvent) -> str:
        subject = event.subject
        tag = f"call{subject.id}" if isinstance(subject, CallRecord) else str(subject)
        return f"{event.fire_time!r} {event.kind.name} {tag}"

    def run(self) -> ReplicationResult:
        self.start()
        cal = self.calendar
        arrival_rng = self.arrival_rng
        lam = self.traffic.lambda_nc
        recent = self._recent
        trace = self.trace
        while True:
            event = cal.pop_next()
            self._advance(event.fire_time)
            recent.append(event)
            if trace is not None:
                trace.append(self._format(event))
            kind = event.kind
            if kind is EventKind.HORIZON_END:
                break
            if kind is EventKind.NEW_ARRIVAL:
                cell_id = event.subject
                cal.at(cal.clock + sample_exp(arrival_rng[cell_id], lam), EventKind.NEW_ARRIVAL, cell_id)
                self.admit_new_call(cell_id, self.originate(cell_id))
            elif kind is EventKind.HOLDING_EXPIRY:
                self.on_holding_expiry(event.subject)
            elif kind is EventKind.DWELL_EXPIRY:
                call = event.subject
                self.request_handover(call, other_cell(call.serving_cell))
            elif kind is EventKind.REGION_DEADLINE:
                self.on_deadline_expiry(event.subject)
            elif kind is EventKind.RETRY_ATTEMPT:
                call = event.subject
                self.admit_new_call(call.home_cell, call)
            if self.check_every_event:
                self.check_invariants()
        self.audit.clock_horizon = self.horizon
        self.ledger = self.audit - self._snapshot
        self.ledger.clock_horizon = self.horizon - self.warmup
        self.check_invariants()
        self.check_accounting()
        return ReplicationResult(self.ledger, self.audit, len(self.calls), self.seed,
                                 self.replication, self.trace)

    # -- invariants --------------------------------------------------------

    def check_invariants(self) -> None:
        """Channel conservation, buffer membership and capacity limits."""
        holding = {c: 0 for c in CELLS}
        queued = {c: 0 for c in CELLS}
        for call in self.calls.values():
            if call.state in (CallState.ACTIVE, CallState.QUEUED):
                holding[call.serving_cell] += 1
            if call.state is CallState.QUEUED:
                queued[call.serving_cell] += 1
                if call not in self.cells[call.serving_cell].out_buffer:
                    self._fail(f"{call!r} queued but missing from its buffer")
        for c, cell in self.cells.items():
            if not 0 <= cell.busy <= cell.channels:
                self._fail(f"cell {c} busy={cell.busy} outside [0, {cell.channels}]")
            if cell.busy != holding[c]:
                self._fail(f"cell {c} busy={cell.busy} but {holding[c]} calls hold its channels")
            buf = cell.out_buffer
            if len(buf) > buf.capacity:
                self._fail(f"buffer {buf.direction} holds {len(buf)} > {buf.capacity}")
            ids = [call.id for call in buf]
            if len(ids) != len(set(ids)) or len(ids) != queued[c]:
                self._fail(f"buffer {buf.direction} membership mismatch")
            for call in buf:
                if call.state is not CallState.QUEUED:
                    self._fail(f"{call!r} in buffer {buf.direction} is not queued")
        if self._busy_total != self.cells[1].busy + self.cells[2].busy:
            self._fail("busy total out of sync")

    def check_accounting(self) -> None:
        a = self.audit
        in_flight = len(self.calls)
        if a.calls_originated != a.calls_blocked + a.completions + a.forced_terminations + in_flight:
            self._fail(
                f"accounting: originated {a.calls_originated} != blocked {a.calls_blocked} + "
                f"completed {a.completions} + forced {a.forced_terminations} + in-flight {in_flight}")
        if a.blocked_new + a.admitted_new != a.new_arrivals:
            self._fail("attempt accounting: blocked + admitted != arrivals")
        pending = sum(1 for c in self.calls.values() if c.state is CallState.QUEUED or c.doomed)
        if a.handover_requests != a.handover_successes + a.handover_failures + a.handover_moot + pending:
            self._fail(
                f"handover accounting: requests {a.handover_requests} != successes "
                f"{a.handover_successes} + failures {a.handover_failures} + moot "
                f"{a.handover_moot} + pending {pending}")


def simulate(traffic: TrafficConfig, policy: PolicyConfig, channels: int = 10, seed: int = 0,
             replication: int = 0, horizon: float = 1e5, warmup_fraction: float = 0.1,
             record_trace: bool = False, check_invariants: bool = False) -> ReplicationResult:
    """Run one replication to the horizon and return its counters."""
    world = World(traffic, policy, channels, seed, replication, horizon, warmup_fraction,
                  record_trace, check_invariants)
    return world.run()
