"""Experiment configuration, replicated sweep campaigns and CSV output."""

from __future__ import annotations

import hashlib
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Iterable

from . import __version__
from . import analytic, metrics
from .model import (
    BlockedBehavior,
    ConfigError,
    PolicyConfig,
    PriorityRule,
    TrafficConfig,
    standard_policy,
)
from .protocol import simulate

log = logging.getLogger(__name__)

POLICY_NAMES = ("exchange", "buffered", "conventional")
SWEEP_AXES = ("none", "lambda_nc", "queue_capacity")
_AXIS_ALIASES = {"lambda": "lambda_nc", "queue": "queue_capacity", "q": "queue_capacity"}
DEFAULT_SWEEPS = {"lambda_nc": (0.2, 2.0, 0.2), "queue_capacity": (0, 8, 1)}
ACCESS_DENOMINATOR = "handover_requests"


@dataclass(frozen=True)
class ExperimentSpec:
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    policies: tuple[str, ...] = POLICY_NAMES
    channels: int = 10
    buffer_capacity: int = 2
    priority_rule: PriorityRule = PriorityRule.URGENCY_DEADLINE
    blocked_call_behavior: BlockedBehavior = BlockedBehavior.DEPART
    retry_delay: float = 5.0
    retry_max_attempts: int = 1
    literal_step6: bool = True
    eager_exchange: bool = False
    sweep: str = "none"
    sweep_start: float | None = None
    sweep_stop: float | None = None
    sweep_step: float | None = None
    horizon: float = 1e5
    warmup_fraction: float = 0.1
    replications: int = 20
    base_seed: int = 1
    output_path: str = "results.csv"
    oracle: bool = False

    def __post_init__(self) -> None:
        for key in ("sweep_start", "sweep_stop", "sweep_step"):
            value = getattr(self, key)
            if value is not None:
                object.__setattr__(self, key, float(value))
        if self.channels < 1:
            raise ConfigError("channels: must be a positive integer")
        if self.buffer_capacity < 0:
            raise ConfigError("buffer_capacity: must be non-negative")
        if not self.policies:
            raise ConfigError("policies: at least one policy is required")
        for name in self.policies:
            if name not in POLICY_NAMES:
                raise ConfigError(f"policies: unknown policy {name!r}")
        if self.sweep not in SWEEP_AXES:
            raise ConfigError(f"sweep: expected one of {', '.join(SWEEP_AXES)}, got {self.sweep!r}")
        if self.sweep == "none":
            if (self.sweep_start, self.sweep_stop, self.sweep_step) != (None, None, None):
                raise ConfigError("sweep: a range was given without a sweep axis")
        else:
            start, stop, step = self.sweep_start, self.sweep_stop, self.sweep_step
            if None in (start, stop, step):
                raise ConfigError("sweep: start, stop and step are all required")
            if not start < stop:
                raise ConfigError(f"sweep_start: must be below sweep_stop ({start} >= {stop})")
            if not step > 0:
                raise ConfigError(f"sweep_step: must be positive, got {step}")
            if self.sweep == "lambda_nc" and not start > 0:
                raise ConfigError("sweep_start: arrival rates must be positive")
            if self.sweep == "queue_capacity":
                if start < 0 or any(float(v) != int(v) for v in (start, stop, step)):
                    raise ConfigError("sweep_start: queue sweeps need non-negative integers")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("horizon: must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction: must lie in [0, 1)")
        if self.replications < 1:
            raise ConfigError("replications: must be at least 1")
        # validates the retry settings
        self.policy(self.policies[0])

    def sweep_values(self) -> list[float]:
        if self.sweep == "none":
            return [self.traffic.lambda_nc]
        n = int(math.floor((self.sweep_stop - self.sweep_start) / self.sweep_step + 1e-9)) + 1
        values = [round(self.sweep_start + k * self.sweep_step, 12) for k in range(n)]
        if self.sweep == "queue_capacity":
            return [int(v) for v in values]
        return values

    def policy(self, name: str, buffer_capacity: int | None = None) -> PolicyConfig:
        q = self.buffer_capacity if buffer_capacity is None else buffer_capacity
        return standard_policy(
            name, q,
            blocked_call_behavior=self.blocked_call_behavior,
            retry_delay=self.retry_delay,
            retry_max_attempts=self.retry_max_attempts,
            priority_rule=self.priority_rule,
            literal_step6=self.literal_step6,
            eager_exchange=self.eager_exchange,
        )

    def point(self, name: str, value: float) -> tuple[TrafficConfig, PolicyConfig]:
        """Traffic and policy for one policy at one sweep value."""
        if self.sweep == "lambda_nc":
            return replace(self.traffic, lambda_nc=value), self.policy(name)
        if self.sweep == "queue_capacity":
            return self.traffic, self.policy(name, int(value))
        return self.traffic, self.policy(name)


# -- config text ----------------------------------------------------------------

_TRAFFIC_KEYS = ("lambda_nc", "mu_d", "delta_h", "region_deadline_mean", "dwell_enabled")
_SPEC_KEYS = tuple(f.name for f in fields(ExperimentSpec) if f.name != "traffic")
CONFIG_KEYS = _TRAFFIC_KEYS + _SPEC_KEYS


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


_PARSERS = {
    "lambda_nc": float, "mu_d": float, "delta_h": float, "region_deadline_mean": float,
    "dwell_enabled": _parse_bool,
    "policies": lambda t: tuple(p.strip() for p in t.split(",") if p.strip()),
    "channels": _parse_int, "buffer_capacity": _parse_int,
    "priority_rule": PriorityRule, "blocked_call_behavior": BlockedBehavior,
    "retry_delay": float, "retry_max_attempts": _parse_int,
    "literal_step6": _parse_bool, "eager_exchange": _parse_bool,
    "sweep": lambda t: _AXIS_ALIASES.get(t, t),
    "sweep_start": float, "sweep_stop": float, "sweep_step": float,
    "horizon": float, "warmup_fraction": float, "replications": _parse_int,
    "base_seed": _parse_int, "output_path": str, "oracle": _parse_bool,
}


def build_spec(values: dict) -> ExperimentSpec:
    """Assemble a spec from parsed values, filling in default sweep ranges."""
    values = dict(values)
    traffic_args = {k: values.pop(k) for k in _TRAFFIC_KEYS if k in values}
    try:
        traffic = TrafficConfig(**traffic_args)
    except ConfigError as exc:
        raise ConfigError(str(exc)) from None
    axis = values.get("sweep", "none")
    if axis in DEFAULT_SWEEPS:
        for key, default in zip(("sweep_start", "sweep_stop", "sweep_step"), DEFAULT_SWEEPS[axis]):
            values.setdefault(key, default)
    return ExperimentSpec(traffic=traffic, **values)


def parse_config(text: str) -> ExperimentSpec:
    """Parse flat ``key = value`` text; ``#`` starts a comment.

    Unspecified keys take the defaults (10 channels, buffer of 2, 1 call/s,
    120 s dwell, 240 s holding).
    """
    values: dict = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if value in ("", "none") and key.startswith("sweep_"):
            continue
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
        lines[key] = lineno
    try:
        return build_spec(values)
    except ConfigError as exc:
        message = str(exc)
        key = message.split(":", 1)[0].split()[0]
        if key in lines:
            message = f"line {lines[key]}: {message}"
        raise ConfigError(message) from None


def _fmt_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (PriorityRule, BlockedBehavior)):
        return value.value
    if isinstance(value, tuple):
        return ", ".join(value)
    return repr(value) if isinstance(value, float) else str(value)


def format_config(spec: ExperimentSpec) -> str:
    """Canonical text form; ``parse_config`` of it gives back ``spec``."""
    out = []
    for key in _TRAFFIC_KEYS:
        out.append(f"{key} = {_fmt_value(getattr(spec.traffic, key))}")
    for key in _SPEC_KEYS:
        out.append(f"{key} = {_fmt_value(getattr(spec, key))}")
    return "\n".join(out) + "\n"


def spec_hash(spec: ExperimentSpec) -> str:
    """Digest of the canonical config; the output location does not count."""
    text = format_config(replace(spec, output_path=""))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- campaigns ------------------------------------------------------------------

SAMPLE_METRICS = {
    "p_nc": metrics.blocking_probability,
    "p_hf": metrics.handover_failure_probability,
    "p_forced": metrics.forced_termination_probability,
    "p_access": metrics.access_probability,
    "lambda_hoc": lambda ledger: metrics.empirical_handover_rate(ledger, cells=2),
    "mean_busy": lambda ledger: metrics.mean_busy(ledger, cells=2),
}

CSV_COLUMNS = (
    "policy", "sweep_axis", "sweep_value",
    "p_nc", "p_hf", "p_forced", "p_access", "lambda_hoc", "carried_traffic", "mean_busy",
    "ci_p_nc", "ci_p_hf", "ci_p_forced", "ci_p_access", "ci_lambda_hoc",
    "erlang_b", "ctmc_p_nc", "ctmc_p_hf", "ctmc_p_access",
    "replications", "seed",
)


@dataclass
class ResultRow:
    policy: str
    sweep_axis: str
    sweep_value: float
    p_nc: float | None
    p_hf: float | None
    p_forced: float | None
    p_access: float | None
    lambda_hoc: float | None
    carried_traffic: float | None
    mean_busy: float | None
    ci_p_nc: float | None
    ci_p_hf: float | None
    ci_p_forced: float | None
    ci_p_access: float | None
    ci_lambda_hoc: float | None
    erlang_b: float | None
    ctmc_p_nc: float | None
    ctmc_p_hf: float | None
    ctmc_p_access: float | None
    replications: int
    seed: int
    samples: dict[str, list] = field(default_factory=dict, repr=False)
    ledgers: list = field(default_factory=list, repr=False)


def _run_one(args) -> metrics.MetricsLedger:
    traffic, policy, channels, seed, rep, horizon, warmup = args
    return simulate(traffic, policy, channels, seed, rep, horizon, warmup).ledger


def _oracles(spec: ExperimentSpec, traffic: TrafficConfig, policy: PolicyConfig):
    erl = None
    if not traffic.dwell_enabled:
        erl = analytic.erlang_b(spec.channels, traffic.lambda_nc / traffic.delta_h)
    ctmc = None
    if policy.blocked_call_behavior is BlockedBehavior.DEPART and analytic.ctmc_is_exact(policy):
        try:
            ctmc = analytic.ctmc_oracle(traffic, policy, spec.channels)
        except (analytic.StateSpaceTooLarge, analytic.NonErgodicChain) as exc:
            log.info("no CTMC oracle for %s: %s", policy.label, exc)
    return erl, ctmc


def _summarize(name: str, spec: ExperimentSpec, value: float, traffic: TrafficConfig,
               policy: PolicyConfig, ledgers: list) -> ResultRow:
    samples = {k: [fn(L) for L in ledgers] for k, fn in SAMPLE_METRICS.items()}

    def mean(k):
        xs = [x for x in samples[k] if x is not None]
        return math.fsum(xs) / len(xs) if xs else None

    def half(k):
        ci = metrics.confidence_interval(samples[k])
        return None if ci is None else ci[1]

    p_nc = mean("p_nc")
    carried = None
    if p_nc is not None:
        carried = analytic.carried_traffic(analytic.offered_traffic(traffic.lambda_nc, traffic.mu_d), p_nc)
    erl, ctmc = _oracles(spec, traffic, policy) if spec.oracle else (None, None)
    return ResultRow(
        policy=name, sweep_axis=spec.sweep, sweep_value=value,
        p_nc=p_nc, p_hf=mean("p_hf"), p_forced=mean("p_forced"), p_access=mean("p_access"),
        lambda_hoc=mean("lambda_hoc"), carried_traffic=carried, mean_busy=mean("mean_busy"),
        ci_p_nc=half("p_nc"), ci_p_hf=half("p_hf"), ci_p_forced=half("p_forced"),
        ci_p_access=half("p_access"), ci_lambda_hoc=half("lambda_hoc"),
        erlang_b=erl,
        ctmc_p_nc=ctmc.blocking if ctmc else None,
        ctmc_p_hf=ctmc.handover_failure if ctmc else None,
        ctmc_p_access=ctmc.access if ctmc else None,
        replications=len(ledgers), seed=spec.base_seed,
        samples=samples, ledgers=ledgers,
    )


def run_campaign(spec: ExperimentSpec, jobs: int = 1) -> list[ResultRow]:
    """Every (sweep point, policy, replication) run, folded into one row per pair.

    Replication ``r`` uses the stream ``(base_seed, r)`` for every policy and
    sweep point, so comparisons across policies and along the sweep are made
    under common random numbers. Rows come out in (sweep, policy) order
    whatever the completion order of parallel workers.
    """
    tasks = []
    keys = []
    for value in spec.sweep_values():
        for name in spec.policies:
            traffic, policy = spec.point(name, value)
            keys.append((name, value, traffic, policy))
            for rep in range(spec.replications):
                tasks.append((traffic, policy, spec.channels, spec.base_seed, rep,
                              spec.horizon, spec.warmup_fraction))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            ledgers = list(pool.map(_run_one, tasks))
    else:
        ledgers = [_run_one(t) for t in tasks]
    rows = []
    n = spec.replications
    for k, (name, value, traffic, policy) in enumerate(keys):
        log.debug("summarizing %s at %s", name, value)
        rows.append(_summarize(name, spec, value, traffic, policy, ledgers[k * n:(k + 1) * n]))
    return rows


# -- CSV --------------------------------------------------------------------------

def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6g}"
    return str(value)


def emit_csv(rows: Iterable[ResultRow], spec: ExperimentSpec | None = None,
             timestamp: str | None = None) -> str:
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to emit")
    buf = io.StringIO()
    buf.write(f"# hoxsim {__version__}\n")
    if spec is not None:
        buf.write(f"# spec_hash {spec_hash(spec)}\n")
        buf.write(f"# base_seed {spec.base_seed}\n")
        buf.write(f"# horizon {spec.horizon!r} warmup_fraction {spec.warmup_fraction!r}\n")
    buf.write(f"# p_access denominator: {ACCESS_DENOMINATOR}\n")
    if timestamp is not None:
        buf.write(f"# generated {timestamp}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(_fmt_cell(getattr(row, c)) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def write_csv(path: str, rows: Iterable[ResultRow], spec: ExperimentSpec | None = None,
              timestamp: str | None = None) -> None:
    text = emit_csv(rows, spec, timestamp)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
