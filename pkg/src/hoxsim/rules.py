"""Count-level decision rules shared by the simulator and the CTMC builder.

Both the event-driven protocol engine and the exact Markov-chain oracle call
these functions, so the two can only disagree about bookkeeping, never about
which branch of the scheme applies.
"""

from __future__ import annotations

import enum


class BlockReason(enum.Enum):
    NO_CHANNEL = "no_channel"
    HANDOVER_QUEUE_NONEMPTY = "handover_queue_nonempty"


class HandoverCase(enum.Enum):
    FREE_CHANNEL = "free_channel"
    ENQUEUE = "enqueue"
    EXCHANGE = "exchange"
    NO_RECOURSE = "no_recourse"


def admission_block(busy: int, channels: int, inbound_waiting: int,
                    literal_step6: bool = True) -> BlockReason | None:
    """Reason a new call is refused, or ``None`` if it is admitted."""
    if busy >= channels:
        return BlockReason.NO_CHANNEL
    if literal_step6 and inbound_waiting > 0:
        return BlockReason.HANDOVER_QUEUE_NONEMPTY
    return None


def handover_case(target_busy: int, channels: int, own_queue: int, capacity: int,
                  opposite_queue: int, exchange_enabled: bool,
                  eager_exchange: bool = False) -> HandoverCase:
    """Which of the handover branches a request falls into.

    ``own_queue`` is the length of the requester's outbound buffer and
    ``opposite_queue`` the length of the buffer travelling the other way,
    whose members hold channels in the requester's target cell.
    """
    if target_busy < channels:
        return HandoverCase.FREE_CHANNEL
    can_swap = exchange_enabled and opposite_queue > 0
    if eager_exchange and can_swap:
        return HandoverCase.EXCHANGE
    if own_queue < capacity:
        return HandoverCase.ENQUEUE
    if can_swap:
        return HandoverCase.EXCHANGE
    return HandoverCase.NO_RECOURSE


def serves_on_release(inbound_waiting: int) -> bool:
    """A freed channel goes to a waiting handover call before new calls."""
    return inbound_waiting > 0
