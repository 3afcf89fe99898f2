"""Closed-loop traffic sources: a scalable control and a classic control.

The scalable flow is DCTCP-like: the receiver echoes ECN marks, the
sender keeps an EWMA ``alpha`` of the per-window mark fraction and scales
its window down by ``alpha/2`` at most once per RTT, so its steady-state
mark rate per RTT stays constant as the rate scales. It paces its packets
at cwnd per RTT; un-paced windows arrive as bursts that a shallow
low-latency queue cannot absorb.

The classic flow is plain AIMD (one MTU per RTT additive increase, halve
on loss), whose steady-state rate goes as 1/sqrt(p).

Windows, not wall-clock timers, delimit RTT epochs: an epoch closes when
a full window's worth of bytes (measured at epoch start) has been acked,
which is what one round trip means to a sliding window. ACKs are
per-packet and take no time on the reverse path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .queue import Duration, SimTime, TrafficClass


@dataclass
class ScalableFlow:
    flow_id: int
    cwnd: int = 15_000  # bytes; 10 MTU start, no slow start
    alpha: float = 0.0
    g: float = 1.0 / 16.0
    base_rtt: Duration = 10_000_000
    pacing_enabled: bool = True
    mtu: int = 1500
    marks_this_rtt: int = 0
    acks_this_rtt: int = 0
    inflight: int = 0
    epoch_acked: int = 0
    epoch_target: int = 0  # bytes to ack before the epoch closes
    last_send: Optional[SimTime] = None
    epoch_mark_fractions: list = field(default_factory=list)
    traffic_class: TrafficClass = TrafficClass.L4S

    def __post_init__(self) -> None:
        if self.cwnd < self.mtu:
            raise ValueError("cwnd below one MTU")
        if not 0.0 < self.g <= 1.0:
            raise ValueError("EWMA gain g must be in (0, 1]")
        if self.base_rtt <= 0:
            raise ValueError("base_rtt must be positive")
        if self.epoch_target == 0:
            self.epoch_target = self.cwnd


@dataclass
class ClassicFlow:
    flow_id: int
    cwnd: int = 15_000
    base_rtt: Duration = 10_000_000
    in_recovery: bool = False
    mtu: int = 1500
    inflight: int = 0
    epoch_acked: int = 0
    epoch_target: int = 0
    last_send: Optional[SimTime] = None
    pacing_enabled: bool = False  # classic sources are ack-clocked bursts
    traffic_class: TrafficClass = TrafficClass.CLASSIC

    def __post_init__(self) -> None:
        if self.cwnd < self.mtu:
            raise ValueError("cwnd below one MTU")
        if self.base_rtt <= 0:
            raise ValueError("base_rtt must be positive")
        if self.epoch_target == 0:
            self.epoch_target = self.cwnd


@dataclass
class FlowSetup:
    n_l: int
    n_c: int
    rtts: list
    start_times: list

    def __post_init__(self) -> None:
        n = self.n_l + self.n_c
        if n < 1:
            raise ValueError("need at least one flow")
        if len(self.rtts) != n or len(self.start_times) != n:
            raise ValueError("rtts and start_times must cover every flow")

    @classmethod
    def uniform(cls, n_l: int, n_c: int, rtt: Duration, start: SimTime = 0) -> "FlowSetup":
        n = n_l + n_c
        return cls(n_l=n_l, n_c=n_c, rtts=[rtt] * n, start_times=[start] * n)


def scalable_on_ack(f: ScalableFlow, acked: int, marked: bool) -> None:
    """Process one ACK: count it, grow additively on unmarked ACKs, and at
    each epoch boundary fold the window's mark fraction into alpha and
    apply at most one multiplicative reduction."""
    f.acks_this_rtt += 1
    if marked:
        f.marks_this_rtt += 1
    f.inflight = max(0, f.inflight - acked)
    if not marked:
        f.cwnd += f.mtu * acked // f.cwnd
    f.epoch_acked += acked
    if f.epoch_acked >= f.epoch_target:
        _close_scalable_epoch(f)


def _close_scalable_epoch(f: ScalableFlow) -> None:
    frac = f.marks_this_rtt / f.acks_this_rtt
    f.alpha = (1.0 - f.g) * f.alpha + f.g * frac
    f.epoch_mark_fractions.append(frac)
    if frac > 0.0:
        f.cwnd = max(f.mtu, int(f.cwnd * (1.0 - f.alpha / 2.0)))
    f.marks_this_rtt = 0
    f.acks_this_rtt = 0
    f.epoch_acked = 0
    f.epoch_target = f.cwnd


def classic_on_ack(f: ClassicFlow, acked: int, dropped: bool) -> None:
    """Process one ACK or loss notification: AIMD with one halving per RTT."""
    f.inflight = max(0, f.inflight - acked)
    if dropped:
        if not f.in_recovery:
            f.cwnd = max(f.mtu, f.cwnd // 2)
            f.in_recovery = True
    elif not f.in_recovery:
        f.cwnd += f.mtu * acked // f.cwnd
    f.epoch_acked += acked
    if f.epoch_acked >= f.epoch_target:
        f.epoch_acked = 0
        f.epoch_target = f.cwnd
        f.in_recovery = False


def pace_next_send(f: ScalableFlow, now: SimTime) -> SimTime:
    """Earliest time the next packet may leave, spacing sends at cwnd/RTT.

    One MTU-sized packet goes out every mtu·rtt/cwnd nanoseconds; an idle
    sender may send immediately. With pacing disabled the answer is always
    "now", which releases whole windows back-to-back as ACKs arrive.
    """
    if not f.pacing_enabled or f.last_send is None:
        return now
    interval = f.mtu * f.base_rtt // f.cwnd
    return max(now, f.last_send + interval)


def can_send(f, size: int) -> bool:
    """Window check: room for one more packet of ``size`` bytes."""
    return f.inflight + size <= f.cwnd


def on_sent(f, size: int, now: SimTime) -> None:
    f.inflight += size
    f.last_send = now
