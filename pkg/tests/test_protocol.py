import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoxsim.kernel import EventKind
from hoxsim.model import BlockedBehavior, CallState, PolicyConfig, PriorityRule, TrafficConfig, queue_rank
from hoxsim.protocol import (
    ExchangeRefused,
    HandoverResult,
    InvariantViolation,
    World,
    simulate,
)
from hoxsim.rules import BlockReason


def make_world(q=2, exchange=True, channels=10, **policy_kw):
    policy = PolicyConfig(exchange_enabled=exchange, buffer_capacity=q, **policy_kw)
    return World(TrafficConfig(), policy, channels=channels, seed=3)


def fill(world, cell, n):
    calls = []
    for _ in range(n):
        call = world.originate(cell)
        assert world.admit_new_call(cell, call).admitted
        calls.append(call)
    return calls


def test_admission_with_room():
    w = make_world()
    fill(w, 1, 3)
    out = w.admit_new_call(1, w.originate(1))
    assert out.admitted and out.reason is None
    assert w.cells[1].busy == 4


def test_admission_blocked_when_full():
    w = make_world()
    fill(w, 1, 10)
    call = w.originate(1)
    out = w.admit_new_call(1, call)
    assert not out.admitted and out.reason is BlockReason.NO_CHANNEL
    assert call.state is CallState.BLOCKED
    assert w.audit.blocked_new == 1 and w.audit.calls_blocked == 1


def test_admission_blocked_by_waiting_handover():
    w = make_world()
    fill(w, 1, 10)
    mover = fill(w, 2, 1)[0]
    assert w.request_handover(mover, 1).result is HandoverResult.ENQUEUED
    # a channel in cell 1 is made free by hand, with the handover still waiting
    w.cells[1].busy -= 1
    out = w.admit_new_call(1, w.originate(1))
    assert not out.admitted and out.reason is BlockReason.HANDOVER_QUEUE_NONEMPTY


def test_retry_then_give_up():
    w = make_world(blocked_call_behavior=BlockedBehavior.RETRY, retry_delay=5.0, retry_max_attempts=1)
    w.calendar = type(w.calendar)()
    fill(w, 1, 10)
    w.calendar = type(w.calendar)()
    call = w.originate(1)
    w.admit_new_call(1, call)
    assert call.state is CallState.PENDING and w.audit.retries == 1
    retry = w.calendar.pop_next()
    assert retry.kind is EventKind.RETRY_ATTEMPT and retry.subject is call
    assert retry.fire_time == pytest.approx(5.0)
    w.admit_new_call(1, call)
    assert call.state is CallState.BLOCKED
    assert w.audit.new_arrivals == 12 and w.audit.calls_blocked == 1


def test_handover_to_free_channel():
    w = make_world()
    fill(w, 2, 9)
    call = fill(w, 1, 1)[0]
    out = w.request_handover(call, 2)
    assert out.result is HandoverResult.SUCCESS_FREE_CHANNEL
    assert call.serving_cell == 2 and call.state is CallState.ACTIVE
    assert (w.cells[1].busy, w.cells[2].busy) == (0, 10)
    assert w.audit.handover_successes == 1


def test_handover_enqueued_by_priority():
    w = make_world()
    fill(w, 2, 10)
    a, b = fill(w, 1, 2)
    first = w.request_handover(a, 2)
    second = w.request_handover(b, 2)
    assert first.result is second.result is HandoverResult.ENQUEUED
    assert a.state is CallState.QUEUED and a.serving_cell == 1
    assert w.cells[1].busy == 2
    ranked = queue_rank(w.cells[1].out_buffer)
    assert [c.deadline for c in ranked] == sorted([a.deadline, b.deadline])
    expected_pos = 0 if b.deadline < a.deadline else 1
    assert second.position == expected_pos


def fig2_world():
    """Both cells full; q_12 holds one call, q_21 is full."""
    w = make_world(q=2)
    ones = fill(w, 1, 10)
    twos = fill(w, 2, 10)
    partner = ones[0]
    assert w.request_handover(partner, 2).result is HandoverResult.ENQUEUED
    for c in twos[:2]:
        assert w.request_handover(c, 1).result is HandoverResult.ENQUEUED
    return w, partner, twos[2]


def test_exchange_when_own_buffer_full():
    w, partner, arriving = fig2_world()
    out = w.request_handover(arriving, 1)
    assert out.result is HandoverResult.SUCCESS_BY_EXCHANGE and out.partner == partner.id
    assert (w.cells[1].busy, w.cells[2].busy) == (10, 10)
    assert arriving.serving_cell == 1 and partner.serving_cell == 2
    assert arriving.state is partner.state is CallState.ACTIVE
    assert partner not in w.cells[1].out_buffer
    assert w.audit.handover_successes == 2 and w.audit.exchanges == 1
    w.check_invariants()


def test_exchange_refused_for_ineligible_partner():
    w, partner, arriving = fig2_world()
    other = next(c for c in w.calls.values() if c.serving_cell == 1 and c is not partner)
    with pytest.raises(ExchangeRefused):
        w.exchange_channels(arriving, other)
    with pytest.raises(ExchangeRefused):
        w.exchange_channels(arriving, None)


def test_exchange_disabled_refused():
    w = make_world(exchange=False)
    call = fill(w, 1, 1)[0]
    with pytest.raises(ExchangeRefused):
        w.exchange_channels(call, None)


def test_zero_buffer_means_no_recourse():
    w = make_world(q=0, exchange=True)
    fill(w, 2, 10)
    call = fill(w, 1, 1)[0]
    out = w.request_handover(call, 2)
    assert out.result is HandoverResult.FAILURE_NO_RECOURSE
    assert call.doomed and call.serving_cell == 1 and w.cells[1].busy == 1
    assert w.on_deadline_expiry(call)
    assert call.state is CallState.FORCED
    assert w.cells[1].busy == 0
    assert w.audit.forced_terminations == w.audit.handover_failures == 1


def test_full_buffers_without_partner_fail():
    w = make_world(q=1)
    fill(w, 2, 10)
    a, b = fill(w, 1, 2)
    assert w.request_handover(a, 2).result is HandoverResult.ENQUEUED
    assert w.request_handover(b, 2).result is HandoverResult.FAILURE_NO_RECOURSE


def test_release_serves_inbound_head():
    w = make_world()
    twos = fill(w, 2, 10)
    a = fill(w, 1, 1)[0]
    w.request_handover(a, 2)
    w.on_holding_expiry(twos[5])
    assert a.serving_cell == 2 and a.state is CallState.ACTIVE
    assert (w.cells[1].busy, w.cells[2].busy) == (0, 10)
    assert w.audit.completions == 1 and w.audit.handover_successes == 1


def test_release_with_empty_buffers_only_decrements():
    w = make_world()
    calls = fill(w, 1, 4)
    action = w.on_channel_release(1)
    assert action.served == [] and w.cells[1].busy == 3
    del calls


def test_cascade_serves_both_directions():
    w = make_world()
    ones = fill(w, 1, 10)
    twos = fill(w, 2, 10)
    a, b = ones[0], twos[0]
    w.request_handover(a, 2)
    w.request_handover(b, 1)
    w.trace = []
    w.on_holding_expiry(twos[4])
    assert (a.serving_cell, b.serving_cell) == (2, 1)
    assert len(w.cells[1].out_buffer) == len(w.cells[2].out_buffer) == 0
    assert (w.cells[1].busy, w.cells[2].busy) == (10, 9)
    assert w.audit.handover_successes == 2
    w.check_invariants()


def test_deadline_drops_queued_call():
    w = make_world()
    fill(w, 2, 10)
    a = fill(w, 1, 1)[0]
    w.request_handover(a, 2)
    assert w.on_deadline_expiry(a)
    assert a.state is CallState.FORCED
    assert len(w.cells[1].out_buffer) == 0 and w.cells[1].busy == 0
    w.check_invariants()


def test_deadline_after_service_is_stale():
    w = make_world()
    twos = fill(w, 2, 10)
    a = fill(w, 1, 1)[0]
    w.request_handover(a, 2)
    deadline_event = a.deadline_event
    w.on_holding_expiry(twos[0])
    assert deadline_event.cancelled
    assert not w.on_deadline_expiry(a)
    assert w.audit.handover_failures == 0


def test_failure_of_head_lets_next_in_line_be_served():
    w = make_world(q=2)
    twos = fill(w, 2, 10)
    a, b = fill(w, 1, 2)
    w.request_handover(a, 2)
    w.request_handover(b, 2)
    head = w.cells[1].out_buffer.head()
    rest = b if head is a else a
    w.on_deadline_expiry(head)
    w.on_holding_expiry(twos[0])
    assert rest.serving_cell == 2 and rest.state is CallState.ACTIVE
    assert w.audit.handover_failures == 1 and w.audit.handover_successes == 1


def test_target_equal_to_serving_is_a_fault():
    w = make_world()
    call = fill(w, 1, 1)[0]
    with pytest.raises(ValueError):
        w.request_handover(call, 1)


def test_holding_expiry_while_queued_is_moot():
    w = make_world()
    fill(w, 2, 10)
    a = fill(w, 1, 1)[0]
    w.request_handover(a, 2)
    w.on_holding_expiry(a)
    assert a.state is CallState.COMPLETED
    assert w.audit.handover_moot == 1 and len(w.cells[1].out_buffer) == 0
    w.check_accounting()


def test_overfull_cell_raises_with_trace():
    w = make_world(channels=1)
    w.cells[1].busy = 1
    with pytest.raises(InvariantViolation) as info:
        w._occupy(w.cells[1])
    assert "exceeds" in info.value.dump()


def test_trace_is_reproducible():
    t = TrafficConfig(lambda_nc=0.1)
    p = PolicyConfig()
    r1 = simulate(t, p, seed=9, horizon=3000, record_trace=True)
    r2 = simulate(t, p, seed=9, horizon=3000, record_trace=True)
    assert r1.trace == r2.trace and len(r1.trace) > 100
    assert r1.ledger == r2.ledger
    r3 = simulate(t, p, seed=10, horizon=3000, record_trace=True)
    assert r3.trace != r1.trace


def test_blocked_and_forced_are_disjoint():
    w = World(TrafficConfig(lambda_nc=0.3), PolicyConfig(buffer_capacity=1), channels=4, seed=4,
              horizon=5000)
    fates = {}
    retire = w._retire

    def spy(call, state):
        assert call.id not in fates, f"call {call.id} retired twice"
        fates[call.id] = state
        retire(call, state)

    w._retire = spy
    res = w.run()
    states = list(fates.values())
    assert states.count(CallState.BLOCKED) == res.audit.calls_blocked > 0
    assert states.count(CallState.FORCED) == res.audit.forced_terminations > 0


policies = st.builds(
    PolicyConfig,
    exchange_enabled=st.booleans(),
    buffer_capacity=st.integers(0, 3),
    blocked_call_behavior=st.sampled_from(list(BlockedBehavior)),
    priority_rule=st.sampled_from(list(PriorityRule)),
    literal_step6=st.booleans(),
    eager_exchange=st.booleans(),
)


@settings(max_examples=40, deadline=None)
@given(policy=policies,
       channels=st.integers(1, 4),
       lam=st.floats(0.005, 0.2),
       mean_deadline=st.floats(1.0, 60.0),
       seed=st.integers(0, 2**32 - 1))
def test_random_configs_keep_invariants(policy, channels, lam, mean_deadline, seed):
    traffic = TrafficConfig(lambda_nc=lam, mu_d=1 / 30, delta_h=1 / 60,
                            region_deadline_mean=mean_deadline)
    res = simulate(traffic, policy, channels=channels, seed=seed, horizon=1500,
                   check_invariants=True)
    a = res.audit
    assert a.calls_originated == a.calls_blocked + a.completions + a.forced_terminations + res.in_flight
    assert a.blocked_new + a.admitted_new == a.new_arrivals
    assert a.handover_failures == a.forced_terminations
    if not policy.exchange_enabled:
        assert a.exchanges == 0
    assert res.ledger.busy_time <= 2 * channels * res.ledger.clock_horizon + 1e-6
    assert math.isfinite(res.ledger.busy_time)
