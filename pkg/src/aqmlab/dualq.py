"""Coupled dual-queue AQM: one low-latency queue, one classic queue.

Classification puts scalable (ECN-capable) traffic in the low-latency
queue ``lq`` and conventional traffic in ``cq``. A base PI controller
watches the classic queue; its output probability is squared for classic
drops and multiplied by a coupling factor ``k`` for low-latency marks, so
a scalable flow (rate ~ 1/p) and a classic flow (rate ~ 1/sqrt(p)) settle
at roughly equal rates. The low-latency queue is also marked by its own
native policy, and a packet is marked when either the native or the
coupled decision says so. Scheduling is strict priority for ``lq``; the
coupling keeps the classic queue from starving in steady state.

The native policy can be driven by the real head sojourn or, when a
virtual-queue overlay is attached, by the (optionally scaled) virtual
sojourn, which signals congestion before a standing real queue forms.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .marking import (
    CreditState,
    MarkDecision,
    PiState,
    RampParams,
    StepParams,
    credit_mark,
    pi_decide,
    pi_update,
    ramp_decide,
    step_decide,
)
from .queue import Duration, FifoQueue, Packet, SimTime, TrafficClass
from .vq import VirtualQueueState


class Scheduler(Enum):
    L4S_PRIORITY = "l4s-priority"


class DelaySignal(Enum):
    """Which queue-delay measurement feeds the native low-latency policy.

    BYTES attaches the overlay purely as a byte counter: there is no time
    signal, so only byte-driven policies may run on it.
    """

    REAL = "real"
    VIRTUAL = "virtual"
    SCALED_VIRTUAL = "scaled-virtual"
    BYTES = "bytes"


NativeAqm = Union[StepParams, RampParams, PiState]


@dataclass
class DualQState:
    lq: FifoQueue
    cq: FifoQueue
    base_aqm: PiState
    native_aqm: Optional[NativeAqm]  # None disables native marking
    k: float = 2.0
    scheduler: Scheduler = Scheduler.L4S_PRIORITY
    vq: Optional[VirtualQueueState] = None
    signal: DelaySignal = DelaySignal.REAL
    mtu: int = 1500
    floor_packets: int = 2  # guards time-driven ramp/PI natives; step has its own
    native_credit: CreditState = field(default_factory=CreditState)
    coupled_credit: CreditState = field(default_factory=CreditState)

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError("coupling factor k must be positive")
        if self.signal is not DelaySignal.REAL and self.vq is None:
            raise ValueError("virtual delay signal needs a virtual-queue overlay")


def classify(packet: Packet) -> TrafficClass:
    """Queue selector: scalable traffic to lq, everything else to cq."""
    return packet.traffic_class


def select_queue(state: DualQState, packet: Packet) -> FifoQueue:
    return state.lq if classify(packet) is TrafficClass.L4S else state.cq


def enqueue(state: DualQState, packet: Packet, now: SimTime) -> bool:
    """Classify and enqueue; keeps the virtual overlay in step with lq."""
    queue = select_queue(state, packet)
    accepted = queue.enqueue(packet, now)
    if accepted and queue is state.lq and state.vq is not None:
        state.vq.on_enqueue(packet.size, now)
    return accepted


def classic_drop_prob(base_p: float) -> float:
    """Square the base probability for classic traffic.

    Squaring counterbalances the 1/sqrt(p) in the classic rate equation, so
    the coupled pair of signals balances scalable and classic flow rates.
    """
    if not 0.0 <= base_p <= 1.0:
        raise ValueError("base_p must be a probability")
    return base_p * base_p


def coupled_l4s_prob(base_p: float, k: float) -> float:
    """Apply the base probability linearly, scaled by k and clamped to 1."""
    if not 0.0 <= base_p <= 1.0:
        raise ValueError("base_p must be a probability")
    return min(k * base_p, 1.0)


def l4s_delay_signal(state: DualQState, now: SimTime) -> Duration:
    """The delay measurement the native policy acts on; 0 when idle."""
    if state.signal is DelaySignal.REAL:
        sojourn = state.lq.head_sojourn(now)
        return 0 if sojourn is None else sojourn
    assert state.vq is not None
    if state.signal is DelaySignal.BYTES:
        return 0
    if state.signal is DelaySignal.VIRTUAL:
        return state.vq.virtual_sojourn(now)
    return state.vq.scaled_virtual_sojourn(now)


def signal_backlog(state: DualQState) -> int:
    """Backlog in the same domain as the delay signal.

    Floors and byte ramps must look at the virtual backlog when the delay
    signal is virtual: the whole point of the overlay is that it grows
    while the real queue stays short.
    """
    if state.signal is DelaySignal.REAL:
        return state.lq.backlog_bytes
    assert state.vq is not None
    return state.vq.vbacklog


def native_decide(state: DualQState, now: SimTime, rng: random.Random) -> MarkDecision:
    """The native low-latency policy's verdict for the current head packet."""
    aqm = state.native_aqm
    if aqm is None:
        return MarkDecision.NONE
    qdelay = l4s_delay_signal(state, now)
    backlog = signal_backlog(state)
    if isinstance(aqm, StepParams):
        return step_decide(aqm, qdelay, backlog)
    floor = state.floor_packets * state.mtu
    if isinstance(aqm, RampParams):
        if aqm.byte_mode is None and backlog < floor:
            return MarkDecision.NONE
        source = state.native_credit if aqm.derandomize else rng
        return ramp_decide(aqm, qdelay, source, backlog_bytes=backlog)
    if backlog < floor:
        return MarkDecision.NONE
    return pi_decide(aqm, qdelay)


def _coupled_derandomized(state: DualQState) -> bool:
    # follow the native policy's style; step and PI are already deterministic
    if isinstance(state.native_aqm, RampParams):
        return state.native_aqm.derandomize
    return True


def coupled_decide(state: DualQState, rng: random.Random) -> MarkDecision:
    """The base AQM's verdict for the low-latency queue, via the coupling."""
    p = coupled_l4s_prob(state.base_aqm.p, state.k)
    if p <= 0.0:
        return MarkDecision.NONE
    if _coupled_derandomized(state):
        marked = credit_mark(state.coupled_credit, p)
    else:
        marked = rng.random() < p
    return MarkDecision.MARK if marked else MarkDecision.NONE


def l4s_dequeue_decide(state: DualQState, now: SimTime, rng: random.Random) -> MarkDecision:
    """Mark when either the native or the coupled policy says mark.

    Both sides always run: the decisions are independent and the credit
    accumulators must advance for every packet regardless of the outcome.
    """
    native = native_decide(state, now, rng)
    coupled = coupled_decide(state, rng)
    if native is MarkDecision.MARK or coupled is MarkDecision.MARK:
        return MarkDecision.MARK
    return MarkDecision.NONE


def classic_dequeue_decide(state: DualQState, rng: random.Random) -> MarkDecision:
    """Classic congestion signals are drops, at the squared base probability."""
    p = classic_drop_prob(state.base_aqm.p)
    if p > 0.0 and rng.random() < p:
        return MarkDecision.DROP
    return MarkDecision.NONE


def schedule_next(state: DualQState) -> Optional[TrafficClass]:
    """Pick the queue to serve next; None when both are empty."""
    if len(state.lq.packets) > 0:
        return TrafficClass.L4S
    if len(state.cq.packets) > 0:
        return TrafficClass.CLASSIC
    return None


def dequeue_one(
    state: DualQState, now: SimTime, rng: random.Random
) -> tuple[Packet, MarkDecision, Duration]:
    """Serve one packet from the scheduled queue and apply its AQM.

    The decision is taken while the packet is still at the head (delay
    signals read head state), then the packet is popped and the virtual
    overlay drained. A Drop result means the packet must not be
    transmitted; the caller retries the scheduler without advancing time.
    """
    selected = schedule_next(state)
    if selected is None:
        raise IndexError("both queues empty")
    if selected is TrafficClass.L4S:
        decision = l4s_dequeue_decide(state, now, rng)
        packet, sojourn = state.lq.dequeue_head(now)
        if state.vq is not None:
            state.vq.on_dequeue(packet.size)
        if decision is MarkDecision.MARK:
            packet.marked = True
    else:
        decision = classic_dequeue_decide(state, rng)
        packet, sojourn = state.cq.dequeue_head(now)
        if decision is MarkDecision.DROP:
            packet.dropped = True
    return packet, decision, sojourn


def base_aqm_update(state: DualQState, now: SimTime) -> float:
    """Periodic PI step on the classic queue's head sojourn."""
    sojourn = state.cq.head_sojourn(now)
    return pi_update(state.base_aqm, 0 if sojourn is None else sojourn, now)


def native_pi_update(state: DualQState, now: SimTime) -> Optional[float]:
    """Periodic PI step for a PI-flavored native policy; no-op otherwise."""
    if not isinstance(state.native_aqm, PiState):
        return None
    return pi_update(state.native_aqm, l4s_delay_signal(state, now), now)
