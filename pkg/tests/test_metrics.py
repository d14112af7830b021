import pytest

from hoxsim import metrics
from hoxsim.analytic import ctmc_oracle
from hoxsim.metrics import MetricsLedger, confidence_interval
from hoxsim.model import PolicyConfig, TrafficConfig
from hoxsim.protocol import simulate


def test_blocking_examples():
    assert metrics.blocking_probability(MetricsLedger(new_arrivals=100)) == 0.0
    assert metrics.blocking_probability(MetricsLedger(new_arrivals=100, blocked_new=25)) == 0.25


def test_failure_examples():
    assert metrics.handover_failure_probability(MetricsLedger(admitted_new=50)) == 0.0
    led = MetricsLedger(admitted_new=50, handover_failures=5, forced_terminations=5)
    assert metrics.handover_failure_probability(led) == pytest.approx(0.1)
    assert metrics.forced_termination_probability(led) == pytest.approx(0.1)


def test_access_examples():
    led = MetricsLedger(handover_requests=40, handover_successes=40)
    assert metrics.access_probability(led) == 1.0


@pytest.mark.parametrize("fn", [metrics.blocking_probability,
                                metrics.handover_failure_probability,
                                metrics.forced_termination_probability,
                                metrics.access_probability])
def test_zero_denominator_is_absent(fn):
    assert fn(MetricsLedger()) is None


def test_handover_rate_and_busy():
    led = MetricsLedger(handover_requests=300, clock_horizon=100.0, busy_time=500.0)
    assert metrics.empirical_handover_rate(led) == 3.0
    assert metrics.empirical_handover_rate(led, cells=2) == 1.5
    assert metrics.empirical_handover_rate(MetricsLedger(clock_horizon=10.0)) == 0.0
    assert metrics.mean_busy(led, cells=2) == 2.5
    with pytest.raises(ValueError):
        metrics.empirical_handover_rate(MetricsLedger())


def test_ledger_arithmetic():
    a = MetricsLedger(new_arrivals=3, blocked_new=1, admitted_new=2, busy_time=1.5)
    b = MetricsLedger(new_arrivals=5, admitted_new=5, busy_time=0.5)
    total = metrics.merge([a, b])
    assert total == a + b == b + a
    assert total.new_arrivals == 8 and total.busy_time == 2.0
    assert total - b == a
    assert metrics.merge([]) == MetricsLedger()


def test_confidence_interval_examples():
    assert confidence_interval([0.3] * 5) == (0.3, 0.0)
    mean, half = confidence_interval([0.0, 1.0])
    assert mean == 0.5
    # t_{0.975, 1} * s / sqrt(2) with s = sqrt(0.5)
    assert half == pytest.approx(12.706204736 * 0.5, rel=1e-6)
    assert confidence_interval([1.0]) is None
    assert confidence_interval([]) is None
    assert confidence_interval([None, 2.0]) is None


def test_standard_error():
    assert metrics.standard_error([1.0, 3.0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        metrics.standard_error([1.0])


def test_ci_coverage_against_exact_chain():
    traffic = TrafficConfig(lambda_nc=1.0, delta_h=1.0, dwell_enabled=False)
    policy = PolicyConfig(label="conventional", exchange_enabled=False, buffer_capacity=0)
    exact = ctmc_oracle(traffic, policy, 2).blocking
    assert exact == pytest.approx(0.2)
    covered = 0
    for trial in range(100):
        samples = [metrics.blocking_probability(
            simulate(traffic, policy, channels=2, seed=1000 + trial, replication=r,
                     horizon=150.0, warmup_fraction=0.05).ledger) for r in range(10)]
        mean, half = confidence_interval(samples)
        covered += abs(mean - exact) <= half
    assert covered >= 90
