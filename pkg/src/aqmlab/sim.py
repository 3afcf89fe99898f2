"""Deterministic discrete-event simulator driving flows through the AQM.

Time is integer nanoseconds throughout; there is no floating-point time,
so a run is an exact function of its scenario (including the seed) and
replays byte-identically.

Topology: each sender's packets experience their flow's whole base RTT
before reaching the queue, and ACKs return instantly when a packet
finishes transmission. The feedback loop delay is therefore base RTT plus
queue delay, applied the moment service completes, while the queue sees
properly delayed arrivals.

The virtual-queue overlay drains lazily: while the low-latency queue is
empty the engine remembers the idle anchor and, at the next event that
reads virtual state, drains exactly the idle interval's worth of virtual
service. Rate changes close the current idle segment so the per-segment
arithmetic stays exact.
"""

from __future__ import annotations

import csv
import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from . import dualq as dq
from .endpoints import (
    ClassicFlow,
    ScalableFlow,
    can_send,
    classic_on_ack,
    on_sent,
    pace_next_send,
    scalable_on_ack,
)
from .marking import MarkDecision, PiState
from .queue import NS_PER_SEC, Duration, Packet, SimTime, TrafficClass
from .scenario import LinkProfile, Scenario
from .vq import idle_drain_bytes


class EventKind(Enum):
    PACKET_ARRIVAL = "packet-arrival"
    LINK_DEQUEUE = "link-dequeue"
    PI_UPDATE = "pi-update"
    RATE_CHANGE = "rate-change"
    METRICS_SAMPLE = "metrics-sample"
    FLOW_SEND = "flow-send"


def link_service(now: SimTime, profile: LinkProfile, head_size: int) -> Duration:
    """Transmission time of the head packet at the rate in force at ``now``."""
    rate_bps = profile.rate_at(now)
    return head_size * 8 * NS_PER_SEC // rate_bps


@dataclass
class MetricsRecord:
    time_ns: SimTime
    flow_id: int
    traffic_class: TrafficClass
    goodput_bps: int
    cwnd_bytes: int
    marks: int
    drops: int
    real_sojourn_p99_ns: Duration
    virtual_sojourn_p99_ns: Duration
    backlog_bytes: int
    vbacklog_bytes: int
    utilization: float


CSV_COLUMNS = [
    "time_ns",
    "flow_id",
    "class",
    "goodput_bps",
    "cwnd_bytes",
    "marks",
    "drops",
    "real_sojourn_p99_ns",
    "virtual_sojourn_p99_ns",
    "backlog_bytes",
    "vbacklog_bytes",
    "utilization",
]


@dataclass
class RunResult:
    scenario: Scenario
    records: list
    flows: list
    lq_sojourns: list  # (time, sojourn) per served low-latency packet
    cq_sojourns: list
    vq_sojourns: list  # (time, virtual sojourn) at each low-latency dequeue
    delivered_bytes: list  # per flow
    marks: list  # per flow, cumulative
    drops: list
    max_lq_backlog: int
    max_cq_backlog: int
    max_vbacklog: int
    busy_ns: int

    @property
    def duration(self) -> Duration:
        return self.scenario.duration

    def utilization(self) -> float:
        return self.busy_ns / self.duration

    def flow_goodput_bps(self, flow_id: int) -> float:
        return self.delivered_bytes[flow_id] * 8 * NS_PER_SEC / self.duration


def percentile(values, q: float):
    """Nearest-rank percentile; 0 for an empty sample."""
    if not values:
        return 0
    ordered = sorted(values)
    rank = max(1, -(-len(ordered) * q // 100))  # ceil without floats
    return ordered[int(rank) - 1]


def mark_fraction_cv(fractions) -> Optional[float]:
    """Coefficient of variation (population) of per-RTT mark fractions."""
    n = len(fractions)
    if n == 0:
        return None
    mean = sum(fractions) / n
    if mean == 0:
        return None
    var = sum((x - mean) ** 2 for x in fractions) / n
    return var ** 0.5 / mean


class _Sim:
    def __init__(self, scenario: Scenario, debug: bool = False):
        self.s = scenario
        self.debug = debug
        self.rng = random.Random(scenario.seed)
        self.state = scenario.build_dualq()
        self.flows = scenario.build_flows()
        n = len(self.flows)
        self.heap: list = []
        self.seq = 0
        self.now: SimTime = 0

        self.packet_id = 0
        self.in_service: Optional[Packet] = None
        self.service_start: Optional[SimTime] = None
        self.busy_accum = 0
        self.pending_send = [False] * n

        # idle-drain bookkeeping for the virtual overlay
        self.vq_anchor: Optional[SimTime] = 0 if self.state.vq is not None else None
        self.vq_anchor_drained = 0

        self.sent = [0] * n
        self.arrived = [0] * n
        self.delivered = [0] * n
        self.dropped = [0] * n
        self.marks = [0] * n
        self.delivered_bytes = [0] * n
        self.interval_bytes = [0] * n

        self.lq_sojourns: list = []
        self.cq_sojourns: list = []
        self.vq_sojourns: list = []
        self.iv_lq: list = []
        self.iv_cq: list = []
        self.iv_vq: list = []
        self.max_lq_backlog = 0
        self.max_cq_backlog = 0
        self.max_vbacklog = 0

        self.records: list = []
        self.prev_sample = 0
        self.prev_busy = 0

    # ---- event plumbing ----

    def _push(self, time: SimTime, kind: EventKind, payload) -> None:
        heapq.heappush(self.heap, (time, self.seq, kind, payload))
        self.seq += 1

    def run(self) -> RunResult:
        s = self.s
        for i, start in enumerate(s.flows.setup.start_times):
            self._schedule_send(i, start)
        self._push(s.aqm.base_pi.update_interval, EventKind.PI_UPDATE, "base")
        if isinstance(self.state.native_aqm, PiState):
            self._push(
                self.state.native_aqm.update_interval, EventKind.PI_UPDATE, "native"
            )
        for time, rate in s.link.boundaries():
            self._push(time, EventKind.RATE_CHANGE, rate)
        if s.sample_interval <= s.duration:
            self._push(s.sample_interval, EventKind.METRICS_SAMPLE, None)

        while self.heap and self.heap[0][0] <= s.duration:
            time, _, kind, payload = heapq.heappop(self.heap)
            self.now = time
            self._dispatch(kind, payload)
            if self.debug:
                self._check_invariants()

        self.now = s.duration
        if self.prev_sample < s.duration:
            self._sample(s.duration)
        self._check_conservation()
        return self._result()

    def _dispatch(self, kind: EventKind, payload) -> None:
        if kind is EventKind.FLOW_SEND:
            self._on_flow_send(payload)
        elif kind is EventKind.PACKET_ARRIVAL:
            self._on_arrival(payload)
        elif kind is EventKind.LINK_DEQUEUE:
            self._on_link_dequeue(payload)
        elif kind is EventKind.PI_UPDATE:
            self._on_pi_update(payload)
        elif kind is EventKind.RATE_CHANGE:
            self._on_rate_change(payload)
        else:
            self._sample(self.now)
            nxt = self.now + self.s.sample_interval
            if nxt <= self.s.duration:
                self._push(nxt, EventKind.METRICS_SAMPLE, None)

    # ---- virtual-queue idle drain ----

    def _sync_vq(self, now: SimTime) -> None:
        vq = self.state.vq
        if vq is None or self.vq_anchor is None:
            return
        elapsed = now - self.vq_anchor
        if elapsed <= 0 or not vq.params.idle_drain:
            return
        rate_bytes = self.s.link.rate_at(self.vq_anchor) // 8
        target = idle_drain_bytes(elapsed, rate_bytes, vq.params)
        delta = target - self.vq_anchor_drained
        if delta > 0:
            vq.drain(delta)
            self.vq_anchor_drained = target

    def _end_idle(self, now: SimTime) -> None:
        if self.vq_anchor is not None:
            self._sync_vq(now)
            self.vq_anchor = None
            self.vq_anchor_drained = 0

    def _maybe_start_idle(self, now: SimTime) -> None:
        if (
            self.state.vq is not None
            and self.vq_anchor is None
            and len(self.state.lq.packets) == 0
        ):
            self.vq_anchor = now
            self.vq_anchor_drained = 0

    # ---- senders ----

    def _schedule_send(self, flow_id: int, time: SimTime) -> None:
        if self.pending_send[flow_id] or time > self.s.duration:
            return
        self.pending_send[flow_id] = True
        self._push(time, EventKind.FLOW_SEND, flow_id)

    def _on_flow_send(self, flow_id: int) -> None:
        self.pending_send[flow_id] = False
        f = self.flows[flow_id]
        size = self.s.mtu
        if not can_send(f, size):
            return
        if f.pacing_enabled:
            self._send_packet(f)
            if can_send(f, size):
                self._schedule_send(flow_id, pace_next_send(f, self.now))
        else:
            while can_send(f, size):
                self._send_packet(f)

    def _send_packet(self, f) -> None:
        size = self.s.mtu
        packet = Packet(
            id=self.packet_id,
            flow_id=f.flow_id,
            size=size,
            traffic_class=f.traffic_class,
        )
        self.packet_id += 1
        on_sent(f, size, self.now)
        self.sent[f.flow_id] += 1
        self._push(self.now + f.base_rtt, EventKind.PACKET_ARRIVAL, packet)

    def _trigger_send(self, f) -> None:
        if not self.pending_send[f.flow_id]:
            self._schedule_send(f.flow_id, pace_next_send(f, self.now))

    # ---- queue and link ----

    def _on_arrival(self, packet: Packet) -> None:
        self.arrived[packet.flow_id] += 1
        if packet.traffic_class is TrafficClass.L4S:
            self._end_idle(self.now)
        accepted = dq.enqueue(self.state, packet, self.now)
        assert accepted, "scenario queues are unbounded"
        if packet.traffic_class is TrafficClass.L4S:
            self.max_lq_backlog = max(self.max_lq_backlog, self.state.lq.backlog_bytes)
            if self.state.vq is not None:
                self.max_vbacklog = max(self.max_vbacklog, self.state.vq.vbacklog)
        else:
            self.max_cq_backlog = max(self.max_cq_backlog, self.state.cq.backlog_bytes)
        if self.in_service is None:
            self._start_service()

    def _start_service(self) -> None:
        while True:
            selected = dq.schedule_next(self.state)
            if selected is None:
                self._maybe_start_idle(self.now)
                return
            virtual_sojourn = None
            if selected is TrafficClass.L4S and self.state.vq is not None:
                virtual_sojourn = self.state.vq.virtual_sojourn(self.now)
            packet, decision, sojourn = dq.dequeue_one(self.state, self.now, self.rng)
            if decision is MarkDecision.DROP:
                self.dropped[packet.flow_id] += 1
                flow = self.flows[packet.flow_id]
                classic_on_ack(flow, packet.size, dropped=True)
                self._trigger_send(flow)
                continue
            if packet.traffic_class is TrafficClass.L4S:
                self.lq_sojourns.append((self.now, sojourn))
                self.iv_lq.append(sojourn)
                if virtual_sojourn is not None:
                    self.vq_sojourns.append((self.now, virtual_sojourn))
                    self.iv_vq.append(virtual_sojourn)
            else:
                self.cq_sojourns.append((self.now, sojourn))
                self.iv_cq.append(sojourn)
            svc = link_service(self.now, self.s.link, packet.size)
            self.in_service = packet
            self.service_start = self.now
            self._push(self.now + svc, EventKind.LINK_DEQUEUE, packet)
            return

    def _on_link_dequeue(self, packet: Packet) -> None:
        assert packet is self.in_service
        self.busy_accum += self.now - self.service_start
        self.in_service = None
        self.service_start = None

        fid = packet.flow_id
        self.delivered[fid] += 1
        self.delivered_bytes[fid] += packet.size
        self.interval_bytes[fid] += packet.size
        if packet.marked:
            self.marks[fid] += 1
        flow = self.flows[fid]
        if isinstance(flow, ScalableFlow):
            scalable_on_ack(flow, packet.size, packet.marked)
        else:
            classic_on_ack(flow, packet.size, dropped=False)
        self._trigger_send(flow)

        self._maybe_start_idle(self.now)
        self._start_service()

    # ---- controllers, rate, metrics ----

    def _on_pi_update(self, which: str) -> None:
        self._sync_vq(self.now)
        if which == "base":
            dq.base_aqm_update(self.state, self.now)
            nxt = self.now + self.state.base_aqm.update_interval
        else:
            dq.native_pi_update(self.state, self.now)
            nxt = self.now + self.state.native_aqm.update_interval
        if nxt <= self.s.duration:
            self._push(nxt, EventKind.PI_UPDATE, which)

    def _on_rate_change(self, rate_bps: int) -> None:
        # close the idle segment at the boundary so each side drains at
        # its own rate exactly
        if self.vq_anchor is not None:
            self._sync_vq(self.now)
            self.vq_anchor = self.now
            self.vq_anchor_drained = 0

    def _busy_integral(self, now: SimTime) -> int:
        busy = self.busy_accum
        if self.service_start is not None:
            busy += now - self.service_start
        return busy

    def _sample(self, now: SimTime) -> None:
        self._sync_vq(now)
        interval = now - self.prev_sample
        busy = self._busy_integral(now)
        utilization = (busy - self.prev_busy) / interval if interval > 0 else 0.0
        lq_p99 = percentile(self.iv_lq, 99)
        cq_p99 = percentile(self.iv_cq, 99)
        vq_p99 = percentile(self.iv_vq, 99)
        state = self.state
        vbacklog = state.vq.vbacklog if state.vq is not None else 0
        for f in self.flows:
            is_l4s = f.traffic_class is TrafficClass.L4S
            self.records.append(
                MetricsRecord(
                    time_ns=now,
                    flow_id=f.flow_id,
                    traffic_class=f.traffic_class,
                    goodput_bps=self.interval_bytes[f.flow_id]
                    * 8
                    * NS_PER_SEC
                    // interval
                    if interval > 0
                    else 0,
                    cwnd_bytes=f.cwnd,
                    marks=self.marks[f.flow_id],
                    drops=self.dropped[f.flow_id],
                    real_sojourn_p99_ns=lq_p99 if is_l4s else cq_p99,
                    virtual_sojourn_p99_ns=vq_p99 if is_l4s else 0,
                    backlog_bytes=state.lq.backlog_bytes
                    if is_l4s
                    else state.cq.backlog_bytes,
                    vbacklog_bytes=vbacklog if is_l4s else 0,
                    utilization=utilization,
                )
            )
        self.prev_sample = now
        self.prev_busy = busy
        self.interval_bytes = [0] * len(self.flows)
        self.iv_lq = []
        self.iv_cq = []
        self.iv_vq = []

    # ---- end-of-run checks ----

    def _check_conservation(self) -> None:
        queued = [0] * len(self.flows)
        for packet in list(self.state.lq.packets) + list(self.state.cq.packets):
            queued[packet.flow_id] += 1
        in_service = [0] * len(self.flows)
        if self.in_service is not None:
            in_service[self.in_service.flow_id] = 1
        for i in range(len(self.flows)):
            assert self.arrived[i] == (
                self.delivered[i] + self.dropped[i] + queued[i] + in_service[i]
            ), f"conservation violated for flow {i}"
            assert self.sent[i] >= self.arrived[i]

    def _check_invariants(self) -> None:
        vq = self.state.vq
        if vq is not None:
            vq.check_consistency()
        assert self.state.lq.backlog_bytes >= 0
        assert self.state.cq.backlog_bytes >= 0
        assert 0.0 <= self.state.base_aqm.p <= 1.0

    def _result(self) -> RunResult:
        return RunResult(
            scenario=self.s,
            records=self.records,
            flows=self.flows,
            lq_sojourns=self.lq_sojourns,
            cq_sojourns=self.cq_sojourns,
            vq_sojourns=self.vq_sojourns,
            delivered_bytes=self.delivered_bytes,
            marks=self.marks,
            drops=self.dropped,
            max_lq_backlog=self.max_lq_backlog,
            max_cq_backlog=self.max_cq_backlog,
            max_vbacklog=self.max_vbacklog,
            busy_ns=self._busy_integral(self.s.duration),
        )


def run(scenario: Scenario, debug: bool = False) -> RunResult:
    """Execute one scenario; deterministic for a given scenario + seed."""
    return _Sim(scenario, debug=debug).run()


@dataclass
class FlowSummary:
    flow_id: int
    traffic_class: TrafficClass
    mean_goodput_bps: float
    marks: int
    drops: int
    mark_fraction_cv: Optional[float]
    mean_mark_fraction: Optional[float]


@dataclass
class Summary:
    flows: list
    utilization: float
    real_sojourn_p99_ns: Duration
    virtual_sojourn_p99_ns: Duration

    def to_text(self) -> str:
        lines = [
            f"utilization {self.utilization:.4f}",
            f"real_sojourn_p99_ns {self.real_sojourn_p99_ns}",
            f"virtual_sojourn_p99_ns {self.virtual_sojourn_p99_ns}",
        ]
        for f in self.flows:
            cv = "-" if f.mark_fraction_cv is None else f"{f.mark_fraction_cv:.4f}"
            lines.append(
                f"flow {f.flow_id} {f.traffic_class.value} "
                f"goodput_bps {f.mean_goodput_bps:.0f} marks {f.marks} "
                f"drops {f.drops} mark_fraction_cv {cv}"
            )
        return "\n".join(lines) + "\n"


def summarize(result_or_records: Union[RunResult, list]) -> Summary:
    """Aggregate a run (or a bare record list) into per-flow and link stats."""
    if isinstance(result_or_records, RunResult):
        return _summarize_result(result_or_records)
    return _summarize_records(result_or_records)


def _summarize_result(result: RunResult) -> Summary:
    flows = []
    for f in result.flows:
        fractions = getattr(f, "epoch_mark_fractions", None)
        cv = mark_fraction_cv(fractions) if fractions else None
        mean_frac = sum(fractions) / len(fractions) if fractions else None
        flows.append(
            FlowSummary(
                flow_id=f.flow_id,
                traffic_class=f.traffic_class,
                mean_goodput_bps=result.flow_goodput_bps(f.flow_id),
                marks=result.marks[f.flow_id],
                drops=result.drops[f.flow_id],
                mark_fraction_cv=cv,
                mean_mark_fraction=mean_frac,
            )
        )
    return Summary(
        flows=flows,
        utilization=result.utilization(),
        real_sojourn_p99_ns=percentile([s for _, s in result.lq_sojourns], 99),
        virtual_sojourn_p99_ns=percentile([s for _, s in result.vq_sojourns], 99),
    )


def _summarize_records(records: list) -> Summary:
    if not records:
        raise ValueError("no records to summarize")
    by_flow: dict = {}
    for rec in records:
        by_flow.setdefault(rec.flow_id, []).append(rec)
    flows = []
    for flow_id in sorted(by_flow):
        recs = by_flow[flow_id]
        flows.append(
            FlowSummary(
                flow_id=flow_id,
                traffic_class=recs[0].traffic_class,
                mean_goodput_bps=sum(r.goodput_bps for r in recs) / len(recs),
                marks=recs[-1].marks,
                drops=recs[-1].drops,
                mark_fraction_cv=None,
                mean_mark_fraction=None,
            )
        )
    times = sorted({r.time_ns for r in records})
    util_by_time = {r.time_ns: r.utilization for r in records}
    mean_util = sum(util_by_time[t] for t in times) / len(times)
    return Summary(
        flows=flows,
        utilization=mean_util,
        real_sojourn_p99_ns=max(r.real_sojourn_p99_ns for r in records),
        virtual_sojourn_p99_ns=max(r.virtual_sojourn_p99_ns for r in records),
    )


def write_metrics_csv(records: list, path: str) -> None:
    """Write records in the external CSV format, sorted by (time, flow)."""
    ordered = sorted(records, key=lambda r: (r.time_ns, r.flow_id))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in ordered:
            writer.writerow(
                [
                    r.time_ns,
                    r.flow_id,
                    r.traffic_class.value,
                    r.goodput_bps,
                    r.cwnd_bytes,
                    r.marks,
                    r.drops,
                    r.real_sojourn_p99_ns,
                    r.virtual_sojourn_p99_ns,
                    r.backlog_bytes,
                    r.vbacklog_bytes,
                    f"{r.utilization:.6f}",
                ]
            )
