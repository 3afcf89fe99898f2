"""Marking decision functions for the low-latency queue.

All policies are pure functions over small state records. Queue delay
inputs are integer nanoseconds; probabilities are floats in [0, 1].

Policies:

* step  - mark when delay exceeds a single time threshold, suppressed while
  the queue holds fewer bytes than a small packet-count floor (marking a
  near-empty queue at a low drain rate would starve the link).
* ramp  - marking probability rising linearly from ``t_min`` to ``t_max``
  with ``max_p`` at the top; ``t_min == t_max`` degenerates to a step,
  which is the classic data-centre configuration. An optional byte-mode
  drives the same ramp from queue length instead of delay, for
  RED-compatible deployments on fixed-rate links.
* pi    - proportional-integral controller tracking a delay target.

A decision can be randomized (one uniform draw per packet) or
derandomized: probability accumulates in a credit counter and a packet is
marked each time the credit reaches one, giving evenly spaced marks with
the same long-run frequency.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .queue import Duration, SimTime

NS_PER_MS = 1_000_000
NS_PER_SEC = 1_000_000_000


class MarkDecision(Enum):
    NONE = "none"
    MARK = "mark"
    DROP = "drop"


@dataclass
class StepParams:
    threshold_t: Duration = 1 * NS_PER_MS  # 1 ms suits the public Internet
    mtu: int = 1500
    floor_packets: int = 2  # 0 disables the byte floor

    def __post_init__(self) -> None:
        if self.threshold_t <= 0:
            raise ValueError("threshold_t must be positive")
        if self.floor_packets < 0:
            raise ValueError("floor_packets must be >= 0")

    @property
    def floor_bytes(self) -> int:
        return self.floor_packets * self.mtu


@dataclass
class ByteRamp:
    """Byte-mode thresholds for a RED-style ramp driven by queue length."""

    min_th: int
    max_th: int
    mtu: int = 1500

    def __post_init__(self) -> None:
        if self.min_th < 0:
            raise ValueError("min_th must be >= 0")
        # a narrower band gives too few packets per RTT to carry the signal
        if self.max_th - self.min_th < 6 * self.mtu:
            raise ValueError("byte-mode ramp needs at least a 6-MTU band")


@dataclass
class RampParams:
    t_min: Duration = 500_000  # 0.5 ms
    t_max: Duration = 1_500_000  # 1.5 ms
    max_p: float = 1.0
    derandomize: bool = True
    byte_mode: Optional[ByteRamp] = None

    def __post_init__(self) -> None:
        if self.t_min > self.t_max:
            raise ValueError("t_min must not exceed t_max")
        if not 0.0 < self.max_p <= 1.0:
            raise ValueError("max_p must be in (0, 1]")


@dataclass
class PiState:
    """PI controller state; ``p`` is the current marking probability."""

    p: float = 0.0
    target: Duration = 500_000  # 0.5 ms
    alpha: float = 0.16  # probability per second of error, per update
    beta: float = 3.2  # probability per second of error change, per update
    update_interval: Duration = 16 * NS_PER_MS
    prev_qdelay: Duration = 0
    credit: float = 0.0  # accumulator for deterministic 1/p marking

    def __post_init__(self) -> None:
        if self.update_interval <= 0:
            raise ValueError("update_interval must be positive")


@dataclass
class CreditState:
    """Accumulator for derandomized marking."""

    credit: float = 0.0


RngOrCredit = Union[random.Random, CreditState]


def mtu_floor_ok(backlog_bytes: int, mtu: int, floor_packets: int) -> bool:
    """True when the queue is long enough for time-based marking to apply."""
    return backlog_bytes >= floor_packets * mtu


def step_decide(params: StepParams, qdelay: Duration, backlog_bytes: int) -> MarkDecision:
    """Mark when delay exceeds the threshold and the byte floor is met."""
    if qdelay > params.threshold_t and backlog_bytes >= params.floor_bytes:
        return MarkDecision.MARK
    return MarkDecision.NONE


def ramp_probability(params: RampParams, qdelay: Duration) -> float:
    """Linear ramp over delay: 0 below t_min, max_p at or above t_max."""
    return _ramp(qdelay, params.t_min, params.t_max, params.max_p)


def ramp_byte_probability(params: RampParams, backlog_bytes: int) -> float:
    """Byte-mode ramp over queue length; requires ``byte_mode`` thresholds."""
    if params.byte_mode is None:
        raise ValueError("ramp has no byte-mode thresholds")
    return _ramp(backlog_bytes, params.byte_mode.min_th, params.byte_mode.max_th, params.max_p)


def _ramp(value: int, lo: int, hi: int, max_p: float) -> float:
    if value < lo:
        return 0.0
    if value >= hi:
        return max_p
    return max_p * (value - lo) / (hi - lo)


def credit_mark(credit: CreditState, p: float) -> bool:
    """Derandomized marking: accumulate ``p`` and mark on each whole credit."""
    credit.credit += p
    if credit.credit >= 1.0:
        credit.credit -= 1.0
        return True
    return False


def ramp_decide(
    params: RampParams,
    qdelay: Duration,
    rng_or_credit: RngOrCredit,
    backlog_bytes: Optional[int] = None,
) -> MarkDecision:
    """Per-packet ramp decision.

    Probabilistic mode draws one uniform sample; derandomized mode feeds the
    probability into the caller's credit accumulator. In byte mode the ramp
    input is ``backlog_bytes`` rather than the delay.
    """
    if params.byte_mode is not None:
        if backlog_bytes is None:
            raise ValueError("byte-mode ramp needs backlog_bytes")
        p = ramp_byte_probability(params, backlog_bytes)
    else:
        p = ramp_probability(params, qdelay)
    if params.derandomize:
        if not isinstance(rng_or_credit, CreditState):
            raise TypeError("derandomized ramp needs a CreditState")
        marked = credit_mark(rng_or_credit, p)
    else:
        if not isinstance(rng_or_credit, random.Random):
            raise TypeError("probabilistic ramp needs a random.Random")
        marked = rng_or_credit.random() < p
    return MarkDecision.MARK if marked else MarkDecision.NONE


def pi_update(state: PiState, qdelay: Duration, now: SimTime) -> float:
    """One controller step: p += alpha*error + beta*delta_error, clamped.

    Errors are in seconds so the gains read as probability per second of
    error per update. Returns the new probability.
    """
    err = (qdelay - state.target) / NS_PER_SEC
    derr = (qdelay - state.prev_qdelay) / NS_PER_SEC
    state.p = min(1.0, max(0.0, state.p + state.alpha * err + state.beta * derr))
    state.prev_qdelay = qdelay
    return state.p


def pi_mark_interval(state: PiState) -> Optional[int]:
    """Packets between deterministic marks: ceil(1/p); None when p == 0."""
    if state.p <= 0.0:
        return None
    return math.ceil(1.0 / state.p)


def pi_decide(state: PiState, qdelay: Duration) -> MarkDecision:
    """Deterministic per-packet PI marking via the credit accumulator."""
    credit = CreditState(state.credit)
    marked = credit_mark(credit, state.p)
    state.credit = credit.credit
    return MarkDecision.MARK if marked else MarkDecision.NONE
