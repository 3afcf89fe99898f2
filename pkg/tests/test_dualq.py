"""Dual-queue AQM: classification, coupling laws, OR-combined marking."""

import random

import pytest

from aqmlab.dualq import (
    DelaySignal,
    DualQState,
    base_aqm_update,
    classic_drop_prob,
    classify,
    coupled_decide,
    coupled_l4s_prob,
    dequeue_one,
    enqueue,
    l4s_delay_signal,
    l4s_dequeue_decide,
    native_decide,
    native_pi_update,
    schedule_next,
    select_queue,
    signal_backlog,
)
from aqmlab.marking import MarkDecision, PiState, RampParams, StepParams
from aqmlab.queue import FifoQueue, Packet, TrafficClass
from aqmlab.vq import VirtualQueueState, VqParams

MS = 1_000_000


def _pkt(pid, cls=TrafficClass.L4S, size=1500, flow=0):
    return Packet(id=pid, flow_id=flow, size=size, traffic_class=cls)


def _state(native=None, base_p=0.0, k=2.0, vq=None, signal=DelaySignal.REAL):
    return DualQState(
        lq=FifoQueue(),
        cq=FifoQueue(),
        base_aqm=PiState(p=base_p),
        native_aqm=native,
        k=k,
        vq=vq,
        signal=signal,
    )


class TestClassification:
    def test_l4s_to_lq(self):
        state = _state()
        assert classify(_pkt(0)) is TrafficClass.L4S
        assert select_queue(state, _pkt(0)) is state.lq

    def test_classic_to_cq(self):
        state = _state()
        p = _pkt(0, TrafficClass.CLASSIC)
        assert select_queue(state, p) is state.cq

    def test_mixed_trace_preserves_per_class_order(self):
        state = _state()
        classes = [TrafficClass.L4S if i % 2 else TrafficClass.CLASSIC for i in range(10)]
        for i, cls in enumerate(classes):
            enqueue(state, _pkt(i, cls), now=i)
        rng = random.Random(1)
        served = []
        while schedule_next(state) is not None:
            packet, _, _ = dequeue_one(state, now=100, rng=rng)
            served.append(packet)
        l4s_ids = [p.id for p in served if p.traffic_class is TrafficClass.L4S]
        classic_ids = [p.id for p in served if p.traffic_class is TrafficClass.CLASSIC]
        assert l4s_ids == sorted(l4s_ids)
        assert classic_ids == sorted(classic_ids)
        assert len(served) == 10


class TestCouplingLaws:
    def test_classic_prob_is_squared(self):
        assert classic_drop_prob(0.2) == pytest.approx(0.04)
        assert classic_drop_prob(0.0) == 0.0
        assert classic_drop_prob(1.0) == 1.0

    def test_l4s_prob_is_linear_clamped(self):
        assert coupled_l4s_prob(0.2, k=2.0) == pytest.approx(0.4)
        assert coupled_l4s_prob(0.0, k=2.0) == 0.0
        assert coupled_l4s_prob(0.8, k=2.0) == 1.0

    def test_probability_domain_enforced(self):
        with pytest.raises(ValueError):
            classic_drop_prob(1.5)
        with pytest.raises(ValueError):
            coupled_l4s_prob(-0.1, k=2.0)

    def test_squared_linear_relationship_exact_on_grid(self):
        k = 2.0
        for i in range(33):  # unclamped region: k*p <= 1
            base_p = i / 64
            assert classic_drop_prob(base_p) == (coupled_l4s_prob(base_p, k) / k) ** 2


class TestOrCombination:
    def _stuffed(self, state, n=3, enq_time=0):
        for i in range(n):
            enqueue(state, _pkt(i), now=enq_time)

    def test_native_mark_alone_marks(self):
        state = _state(native=StepParams(), base_p=0.0)
        self._stuffed(state)
        out = l4s_dequeue_decide(state, now=2 * MS, rng=random.Random(1))
        assert out is MarkDecision.MARK

    def test_coupled_mark_alone_marks(self):
        state = _state(native=StepParams(), base_p=0.5, k=2.0)  # coupled p = 1
        self._stuffed(state)
        out = l4s_dequeue_decide(state, now=0, rng=random.Random(1))
        assert out is MarkDecision.MARK

    def test_neither_marks(self):
        state = _state(native=StepParams(), base_p=0.0)
        self._stuffed(state)
        out = l4s_dequeue_decide(state, now=0, rng=random.Random(1))
        assert out is MarkDecision.NONE

    def test_both_credits_advance_every_packet(self):
        ramp = RampParams(t_min=0, t_max=2 * MS)  # delay 1 ms -> p = 0.5
        state = _state(native=ramp, base_p=0.25, k=2.0)  # coupled p = 0.5
        self._stuffed(state, n=4, enq_time=0)
        rng = random.Random(1)
        first = l4s_dequeue_decide(state, now=MS, rng=rng)
        assert first is MarkDecision.NONE
        assert state.native_credit.credit == pytest.approx(0.5)
        assert state.coupled_credit.credit == pytest.approx(0.5)
        second = l4s_dequeue_decide(state, now=MS, rng=rng)
        assert second is MarkDecision.MARK  # both accumulators rolled over

    def test_disabled_native_defers_to_coupling(self):
        state = _state(native=None, base_p=0.5, k=2.0)
        self._stuffed(state)
        assert l4s_dequeue_decide(state, now=MS, rng=random.Random(1)) is MarkDecision.MARK
        assert native_decide(state, now=MS, rng=random.Random(1)) is MarkDecision.NONE

    def test_probabilistic_ramp_couples_probabilistically(self):
        ramp = RampParams(derandomize=False)
        state = _state(native=ramp, base_p=0.5, k=2.0)  # coupled p = 1
        assert coupled_decide(state, rng=random.Random(1)) is MarkDecision.MARK
        assert state.coupled_credit.credit == 0.0  # credit untouched


class TestScheduler:
    def test_l4s_priority(self):
        state = _state()
        enqueue(state, _pkt(0), now=0)
        enqueue(state, _pkt(1, TrafficClass.CLASSIC), now=0)
        assert schedule_next(state) is TrafficClass.L4S

    def test_classic_when_lq_empty(self):
        state = _state()
        enqueue(state, _pkt(0, TrafficClass.CLASSIC), now=0)
        assert schedule_next(state) is TrafficClass.CLASSIC

    def test_idle_when_both_empty(self):
        assert schedule_next(_state()) is None

    def test_dequeue_from_empty_raises(self):
        with pytest.raises(IndexError):
            dequeue_one(_state(), now=0, rng=random.Random(1))


class TestDequeueOne:
    def test_l4s_mark_applied_to_packet(self):
        state = _state(native=StepParams(), base_p=0.0)
        for i in range(3):
            enqueue(state, _pkt(i), now=0)
        packet, decision, sojourn = dequeue_one(state, now=2 * MS, rng=random.Random(1))
        assert decision is MarkDecision.MARK
        assert packet.marked and not packet.dropped
        assert sojourn == 2 * MS

    def test_classic_drop_flagged(self):
        state = _state(base_p=1.0)  # squared drop probability 1
        enqueue(state, _pkt(0, TrafficClass.CLASSIC), now=0)
        packet, decision, _ = dequeue_one(state, now=MS, rng=random.Random(1))
        assert decision is MarkDecision.DROP
        assert packet.dropped and not packet.marked

    def test_pass_through_identity(self):
        state = _state(native=None, base_p=0.0)
        for i in range(6):
            cls = TrafficClass.L4S if i % 2 else TrafficClass.CLASSIC
            enqueue(state, _pkt(i, cls), now=0)
        rng = random.Random(1)
        while schedule_next(state) is not None:
            packet, decision, _ = dequeue_one(state, now=5 * MS, rng=rng)
            assert decision is MarkDecision.NONE
            assert not packet.marked and not packet.dropped

    def test_vq_overlay_drained_on_dequeue(self):
        vq = VirtualQueueState(VqParams(lge=6))
        state = _state(native=StepParams(), vq=vq, signal=DelaySignal.VIRTUAL)
        enqueue(state, _pkt(0), now=0)
        assert vq.vbacklog == 1500
        dequeue_one(state, now=10, rng=random.Random(1))
        assert vq.vbacklog == 1500 - (1500 - (1500 >> 6))


class TestDelaySignals:
    def test_real_signal_is_head_sojourn(self):
        state = _state(native=StepParams())
        assert l4s_delay_signal(state, now=5 * MS) == 0  # empty queue
        enqueue(state, _pkt(0), now=MS)
        assert l4s_delay_signal(state, now=5 * MS) == 4 * MS

    def test_virtual_signal_outlives_real_queue(self):
        vq = VirtualQueueState(VqParams(lge=6))
        state = _state(native=StepParams(), vq=vq, signal=DelaySignal.VIRTUAL)
        enqueue(state, _pkt(0), now=0)
        dequeue_one(state, now=10, rng=random.Random(1))
        assert len(state.lq) == 0
        # deferred metadata still ages: 23 virtual bytes from t=0 remain
        assert l4s_delay_signal(state, now=2 * MS) == 2 * MS
        assert signal_backlog(state) == 1500 >> 6

    def test_bytes_signal_reports_no_delay(self):
        vq = VirtualQueueState(VqParams(lge=6))
        state = _state(native=None, vq=vq, signal=DelaySignal.BYTES)
        enqueue(state, _pkt(0), now=0)
        assert l4s_delay_signal(state, now=MS) == 0
        assert signal_backlog(state) == 1500

    def test_real_backlog_for_real_signal(self):
        state = _state(native=StepParams())
        enqueue(state, _pkt(0), now=0)
        assert signal_backlog(state) == 1500


class TestNativeFloorGuard:
    def test_time_ramp_guarded_below_floor(self):
        ramp = RampParams(t_min=0, t_max=MS)
        state = _state(native=ramp)
        enqueue(state, _pkt(0), now=0)  # 1500 bytes < 2-MTU floor
        assert native_decide(state, now=10 * MS, rng=random.Random(1)) is MarkDecision.NONE
        assert state.native_credit.credit == 0.0

    def test_pi_native_guarded_below_floor(self):
        pi = PiState(p=1.0)
        state = _state(native=pi)
        enqueue(state, _pkt(0), now=0)
        assert native_decide(state, now=10 * MS, rng=random.Random(1)) is MarkDecision.NONE

    def test_step_uses_its_own_floor(self):
        state = _state(native=StepParams(floor_packets=0))
        enqueue(state, _pkt(0), now=0)
        assert native_decide(state, now=10 * MS, rng=random.Random(1)) is MarkDecision.MARK


class TestControllers:
    def test_base_update_reads_classic_queue(self):
        state = _state()
        assert base_aqm_update(state, now=0) == 0.0  # empty queue, no error
        enqueue(state, _pkt(0, TrafficClass.CLASSIC), now=0)
        p = base_aqm_update(state, now=100 * MS)  # far above target
        assert p > 0.0

    def test_native_pi_update_only_for_pi(self):
        state = _state(native=StepParams())
        assert native_pi_update(state, now=0) is None
        pi_state = _state(native=PiState())
        assert native_pi_update(pi_state, now=0) is not None


class TestValidation:
    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            _state(k=0.0)

    def test_virtual_signal_requires_overlay(self):
        with pytest.raises(ValueError):
            _state(signal=DelaySignal.VIRTUAL)
