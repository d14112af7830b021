"""Event counters and the probability/rate estimators built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

from scipy import stats


@dataclass
class MetricsLedger:
    """Monotone counters for one replication (or a merge of several).

    ``new_arrivals`` counts admission attempts, retries included, so that
    ``blocked_new + admitted_new == new_arrivals`` always holds. Distinct
    calls are counted in ``calls_originated``. ``handover_moot`` counts
    handover requests whose call ended normally while still waiting.
    """

    new_arrivals: int = 0
    blocked_new: int = 0
    blocked_no_channel: int = 0
    blocked_queue_nonempty: int = 0
    admitted_new: int = 0
    retries: int = 0
    calls_originated: int = 0
    calls_blocked: int = 0
    handover_requests: int = 0
    handover_successes: int = 0
    handover_failures: int = 0
    handover_moot: int = 0
    forced_terminations: int = 0
    completions: int = 0
    exchanges: int = 0
    first_dwell_before_holding: int = 0
    clock_horizon: float = 0.0
    busy_time: float = 0.0

    def __add__(self, other: "MetricsLedger") -> "MetricsLedger":
        return MetricsLedger(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                                for f in fields(self)})

    def __sub__(self, other: "MetricsLedger") -> "MetricsLedger":
        return MetricsLedger(**{f.name: getattr(self, f.name) - getattr(other, f.name)
                                for f in fields(self)})

    def copy(self) -> "MetricsLedger":
        return MetricsLedger(**self.as_dict())

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def merge(ledgers) -> MetricsLedger:
    total = MetricsLedger()
    for ledger in ledgers:
        total = total + ledger
    return total


def _ratio(num: float, den: float) -> float | None:
    return num / den if den > 0 else None


def blocking_probability(ledger: MetricsLedger) -> float | None:
    return _ratio(ledger.blocked_new, ledger.new_arrivals)


def handover_failure_probability(ledger: MetricsLedger) -> float | None:
    """Failed handovers per successfully admitted new call."""
    return _ratio(ledger.handover_failures, ledger.admitted_new)


def forced_termination_probability(ledger: MetricsLedger) -> float | None:
    return _ratio(ledger.forced_terminations, ledger.admitted_new)


def access_probability(ledger: MetricsLedger) -> float | None:
    """Share of handover requests that ended with the call in its new cell."""
    return _ratio(ledger.handover_successes, ledger.handover_requests)


def empirical_handover_rate(ledger: MetricsLedger, cells: int = 1) -> float:
    """Handover requests per second, per cell when ``cells`` is the cell count."""
    if not ledger.clock_horizon > 0:
        raise ValueError("clock_horizon must be positive")
    return ledger.handover_requests / ledger.clock_horizon / cells


def mean_busy(ledger: MetricsLedger, cells: int = 1) -> float:
    if not ledger.clock_horizon > 0:
        raise ValueError("clock_horizon must be positive")
    return ledger.busy_time / ledger.clock_horizon / cells


def confidence_interval(samples: Sequence[float], level: float = 0.95) -> tuple[float, float] | None:
    """Student-t interval ``(mean, half_width)`` over independent replications."""
    xs = [x for x in samples if x is not None]
    n = len(xs)
    if n < 2:
        return None
    mean = math.fsum(xs) / n
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    if var == 0.0:
        return mean, 0.0
    half = stats.t.ppf(0.5 + level / 2.0, n - 1) * math.sqrt(var / n)
    return mean, float(half)


def standard_error(samples: Sequence[float]) -> float:
    xs = [x for x in samples if x is not None]
    n = len(xs)
    if n < 2:
        raise ValueError("need at least two samples")
    mean = math.fsum(xs) / n
    return math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / (n - 1) / n)
