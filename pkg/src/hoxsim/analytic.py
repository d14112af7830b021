"""Closed-form traffic formulas, the Erlang-B oracle and an exact CTMC solver.

The CTMC tracks per cell the number of active calls, of calls waiting in the
outbound buffer and of calls that failed without recourse and are waiting to
leave the handover region. All holding, dwell and transit times are
exponential, so when the service order ignores the residual transit times
(FIFO or random SNR rank) the queued calls are exchangeable and the chain is
exact. Earliest-deadline-first looks at those residuals, which leaves the
longer-lived calls queued; the chain is then exact only for buffers of at
most one entry and otherwise overestimates handover failures slightly.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .model import BlockedBehavior, ConfigError, PolicyConfig, PriorityRule, TrafficConfig
from .rules import HandoverCase, admission_block, handover_case, serves_on_release


def _check_prob(name: str, p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")


def handover_propensity(mu_d: float, delta_h: float) -> float:
    """Probability that a dwell period ends before the call does."""
    if not (mu_d > 0 and delta_h >= 0):
        raise ConfigError(f"rates must be positive (mu_d={mu_d!r}, delta_h={delta_h!r})")
    return mu_d / (mu_d + delta_h)


def handover_access(p_hf: float) -> float:
    _check_prob("p_hf", p_hf)
    return 1.0 - p_hf


def exchange_success(p_nc: float, p_hf: float, P: float) -> float:
    """Chance that a new call is admitted and then hands over successfully."""
    for name, value in (("p_nc", p_nc), ("p_hf", p_hf), ("P", P)):
        _check_prob(name, value)
    return (1.0 - p_nc) * (1.0 - p_hf) * P


class RateVariant(str, enum.Enum):
    LITERAL = "literal"
    FIXED_POINT = "fixed_point"


class DivergentLoad(ArithmeticError):
    """The geometric handover chain does not converge."""


def handover_rate(lambda_nc: float, p_nc: float, p_hf: float, P: float,
                  variant: RateVariant = RateVariant.FIXED_POINT) -> float:
    """Handover requests per second per cell.

    The literal form ``lambda(1-p_nc)P / ((1-p_nc)P)`` cancels to
    ``lambda_nc``. The fixed-point form sums the geometric chain of repeated
    handovers, ``P + P^2(1-p_hf) + ...`` per admitted call.
    """
    if lambda_nc < 0:
        raise ValueError(f"lambda_nc must be non-negative, got {lambda_nc!r}")
    for name, value in (("p_nc", p_nc), ("p_hf", p_hf), ("P", P)):
        _check_prob(name, value)
    if RateVariant(variant) is RateVariant.LITERAL:
        return lambda_nc
    denom = 1.0 - (1.0 - p_hf) * P
    if denom <= 0:
        raise DivergentLoad(f"1 - (1 - p_hf) P = {denom!r} <= 0")
    return lambda_nc * (1.0 - p_nc) * P / denom


def offered_traffic(lambda_nc: float, mu_d: float) -> float:
    """Offered traffic in Erlangs, new-call rate over the dwell rate."""
    if not mu_d > 0:
        raise ConfigError(f"mu_d must be positive, got {mu_d!r}")
    if lambda_nc < 0:
        raise ValueError(f"lambda_nc must be non-negative, got {lambda_nc!r}")
    return lambda_nc / mu_d


def carried_traffic(omega_ot: float, p_nc: float) -> float:
    _check_prob("p_nc", p_nc)
    if omega_ot < 0:
        raise ValueError(f"offered traffic must be non-negative, got {omega_ot!r}")
    return omega_ot * (1.0 - p_nc)


def erlang_b(C: int, A: float) -> float:
    """Erlang-B loss probability of an M/M/C/C system, by recursion."""
    if not isinstance(C, (int, np.integer)) or C < 0:
        raise ValueError(f"C must be a non-negative integer, got {C!r}")
    if A < 0:
        raise ValueError(f"A must be non-negative, got {A!r}")
    b = 1.0
    for k in range(1, C + 1):
        b = A * b / (k + A * b)
    return b


@dataclass(frozen=True)
class AnalyticResult:
    P: float
    omega_ot: float
    alpha_ct: float
    lambda_hoc: float
    lambda_hoc_literal: float
    handover_access: float
    exchange_success: float


def analyze(traffic: TrafficConfig, p_nc: float, p_hf: float) -> AnalyticResult:
    P = handover_propensity(traffic.mu_d, traffic.delta_h)
    omega = offered_traffic(traffic.lambda_nc, traffic.mu_d)
    return AnalyticResult(
        P=P,
        omega_ot=omega,
        alpha_ct=carried_traffic(omega, p_nc),
        lambda_hoc=handover_rate(traffic.lambda_nc, p_nc, p_hf, P, RateVariant.FIXED_POINT),
        lambda_hoc_literal=handover_rate(traffic.lambda_nc, p_nc, p_hf, P, RateVariant.LITERAL),
        handover_access=handover_access(p_hf),
        exchange_success=exchange_success(p_nc, p_hf, P),
    )


# -- exact Markov chain -------------------------------------------------------

MAX_STATES = 100_000


class StateSpaceTooLarge(ValueError):
    pass


class NonErgodicChain(ArithmeticError):
    pass


# state: (active_1, queued_1, doomed_1, active_2, queued_2, doomed_2)
State = tuple[int, int, int, int, int, int]


@dataclass(frozen=True)
class CTMCResult:
    n_states: int
    stationary: np.ndarray
    states: list[State]
    blocking: float
    handover_failure: float
    forced_termination: float
    access: float
    handover_rate: float
    mean_busy: float
    exact: bool


def ctmc_is_exact(policy: PolicyConfig) -> bool:
    """Whether the count-level chain describes ``policy`` exactly."""
    return policy.priority_rule is not PriorityRule.URGENCY_DEADLINE or policy.buffer_capacity <= 1


def _release(s: list[int], cell: int) -> int:
    """Cascade after a channel frees in ``cell`` (0 or 1); returns calls served."""
    served = 0
    while True:
        other = 1 - cell
        if not serves_on_release(s[3 * other + 1]):
            return served
        s[3 * other + 1] -= 1
        s[3 * cell] += 1
        served += 1
        cell = other


def _transitions(state: State, traffic: TrafficConfig, policy: PolicyConfig, C: int):
    """Yield (rate, next_state, flows) for every move out of ``state``.

    ``flows`` maps counter names to the increment the move contributes.
    """
    lam, mu, delta, nu = traffic.lambda_nc, traffic.mu_d, traffic.delta_h, traffic.deadline_rate
    Q = policy.buffer_capacity
    for i in (0, 1):
        j = 1 - i
        n_i, q_i, d_i = state[3 * i: 3 * i + 3]
        busy_i = n_i + q_i + d_i
        busy_j = sum(state[3 * j: 3 * j + 3])
        q_j = state[3 * j + 1]

        reason = admission_block(busy_i, C, q_j, policy.literal_step6)
        if reason is None:
            s = list(state)
            s[3 * i] += 1
            yield lam, tuple(s), {"admitted": 1}
        else:
            yield lam, state, {"blocked": 1}

        def leave(slot: int, rate: float, flows: dict):
            s = list(state)
            s[3 * i + slot] -= 1
            served = _release(s, i)
            if served:
                flows = {**flows, "success": flows.get("success", 0) + served}
            return rate, tuple(s), flows

        if n_i:
            yield leave(0, n_i * delta, {"completion": 1})
        if q_i:
            yield leave(1, q_i * delta, {"completion": 1})
            yield leave(1, q_i * nu, {"forced": 1})
        if d_i:
            yield leave(2, d_i * delta, {"completion": 1})
            yield leave(2, d_i * nu, {"forced": 1})

        if traffic.dwell_enabled and n_i:
            rate = n_i * mu
            case = handover_case(busy_j, C, q_i, Q, q_j, policy.exchange_enabled,
                                 policy.eager_exchange)
            s = list(state)
            s[3 * i] -= 1
            flows = {"request": 1}
            if case is HandoverCase.FREE_CHANNEL:
                s[3 * j] += 1
                flows["success"] = 1 + _release(s, i)
            elif case is HandoverCase.ENQUEUE:
                s[3 * i + 1] += 1
            elif case is HandoverCase.EXCHANGE:
                s[3 * j] += 1
                s[3 * j + 1] -= 1
                s[3 * i] += 1
                flows["success"] = 2
            else:
                s[3 * i + 2] += 1
            yield rate, tuple(s), flows


def ctmc_oracle(traffic: TrafficConfig, policy: PolicyConfig, channels: int,
                max_states: int = MAX_STATES) -> CTMCResult:
    """Exact stationary metrics of the two-cell scheme for small instances."""
    if policy.blocked_call_behavior is not BlockedBehavior.DEPART:
        raise ConfigError("the CTMC oracle only models blocked calls that depart")
    C = channels
    start: State = (0, 0, 0, 0, 0, 0)
    index = {start: 0}
    states = [start]
    rows, cols, vals = [], [], []
    flow_terms: dict[str, list[tuple[int, float]]] = {}
    todo = deque([start])
    while todo:
        state = todo.popleft()
        k = index[state]
        for rate, nxt, flows in _transitions(state, traffic, policy, C):
            if rate == 0:
                continue
            for name, mult in flows.items():
                flow_terms.setdefault(name, []).append((k, rate * mult))
            if nxt == state:
                continue
            if nxt not in index:
                if len(states) >= max_states:
                    raise StateSpaceTooLarge(f"more than {max_states} states")
                index[nxt] = len(states)
                states.append(nxt)
                todo.append(nxt)
            rows.append(k)
            cols.append(index[nxt])
            vals.append(rate)

    n = len(states)
    gen = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    ncomp, _ = csgraph.connected_components(gen, directed=True, connection="strong")
    if ncomp != 1:
        raise NonErgodicChain(f"chain splits into {ncomp} communicating classes")
    gen = gen - sparse.diags(np.asarray(gen.sum(axis=1)).ravel())
    # pi G = 0: pin pi[0] = 1, solve the remaining balance equations, normalize
    if n > 1:
        gt = gen.T.tocsc()
        x = splinalg.spsolve(gt[1:, 1:], -gt[1:, 0].toarray().ravel())
        pi = np.concatenate(([1.0], np.atleast_1d(x)))
        pi /= pi.sum()
    else:
        pi = np.ones(1)
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    if pi.min() < -1e-12:
        raise NonErgodicChain(f"stationary solve produced negative mass {pi.min()!r}")

    def flow(name: str) -> float:
        return math.fsum(pi[k] * r for k, r in flow_terms.get(name, []))

    arrivals = flow("admitted") + flow("blocked")
    admitted = flow("admitted")
    requests = flow("request")
    forced = flow("forced")
    busy = np.array([sum(s) for s in states], dtype=float)
    return CTMCResult(
        n_states=n,
        stationary=pi,
        states=states,
        blocking=flow("blocked") / arrivals,
        handover_failure=forced / admitted if admitted > 0 else math.nan,
        forced_termination=forced / admitted if admitted > 0 else math.nan,
        access=flow("success") / requests if requests > 0 else math.nan,
        handover_rate=requests / 2.0,
        mean_busy=float(pi @ busy) / 2.0,
        exact=ctmc_is_exact(policy),
    )
