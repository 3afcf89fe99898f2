"""FIFO queue substrate: counters, sojourn arithmetic, tail drop."""

import pytest
from hypothesis import given, strategies as st

from aqmlab.queue import FifoQueue, Packet, TrafficClass

MS = 1_000_000


def _pkt(pid, size, cls=TrafficClass.L4S):
    return Packet(id=pid, flow_id=0, size=size, traffic_class=cls)


class TestEnqueue:
    def test_single_enqueue(self):
        q = FifoQueue()
        assert q.enqueue(_pkt(0, 1500), now=0)
        assert q.backlog_bytes == 1500
        assert q.count_enq == 1500

    def test_fifo_order_of_metas(self):
        q = FifoQueue()
        q.enqueue(_pkt(0, 1000), now=0)
        q.enqueue(_pkt(1, 500), now=1)
        assert q.backlog_bytes == 1500
        assert [m.size for m in q.metas] == [1000, 500]
        assert [m.enq_time for m in q.metas] == [0, 1]

    def test_tail_drop_at_capacity(self):
        q = FifoQueue(capacity_bytes=3000)
        q.enqueue(_pkt(0, 2000), now=0)
        p = _pkt(1, 1500)
        assert not q.enqueue(p, now=1)
        assert p.dropped
        assert q.backlog_bytes == 2000
        assert q.count_enq == 2000
        assert q.count_deq == 0

    def test_packet_size_must_be_positive(self):
        with pytest.raises(ValueError):
            _pkt(0, 0)


class TestDequeue:
    def test_sojourn_is_age_at_dequeue(self):
        q = FifoQueue()
        q.enqueue(_pkt(0, 1000), now=0)
        p, sojourn = q.dequeue_head(now=1_200_000)
        assert p.id == 0
        assert sojourn == 1_200_000  # 1.2 ms

    def test_zero_sojourn_same_instant(self):
        q = FifoQueue()
        q.enqueue(_pkt(0, 1000), now=5)
        _, sojourn = q.dequeue_head(now=5)
        assert sojourn == 0

    def test_fifo_returns_earliest(self):
        q = FifoQueue()
        for i, t in enumerate((0, 1000, 2000)):
            q.enqueue(_pkt(i, 100), now=t)
        p, _ = q.dequeue_head(now=3000)
        assert p.id == 0

    def test_empty_dequeue_raises(self):
        with pytest.raises(IndexError):
            FifoQueue().dequeue_head(now=0)

    def test_head_sojourn_without_dequeue(self):
        q = FifoQueue()
        assert q.head_sojourn(now=10) is None
        q.enqueue(_pkt(0, 100), now=10)
        assert q.head_sojourn(now=25) == 15
        assert len(q) == 1


class TestBacklog:
    def test_fresh_queue_is_empty(self):
        assert FifoQueue().backlog_bytes == 0

    def test_backlog_accumulates(self):
        q = FifoQueue()
        q.enqueue(_pkt(0, 1500), now=0)
        q.enqueue(_pkt(1, 500), now=0)
        assert q.backlog_bytes == 2000

    def test_backlog_returns_to_zero(self):
        q = FifoQueue()
        q.enqueue(_pkt(0, 1500), now=0)
        q.dequeue_head(now=0)
        assert q.backlog_bytes == 0


@given(
    ops=st.lists(
        st.one_of(
            st.tuples(st.just("enq"), st.integers(min_value=64, max_value=1500)),
            st.tuples(st.just("deq"), st.just(0)),
        ),
        max_size=200,
    )
)
def test_backlog_matches_listsum_oracle(ops):
    """backlog_bytes always equals the naive sum of queued packet sizes."""
    q = FifoQueue()
    now = 0
    pid = 0
    prev_enq, prev_deq = 0, 0
    for kind, size in ops:
        now += 1
        if kind == "enq":
            q.enqueue(_pkt(pid, size), now=now)
            pid += 1
        elif q.packets:
            q.dequeue_head(now=now)
        assert q.backlog_bytes == sum(p.size for p in q.packets)
        assert q.backlog_bytes == sum(m.size for m in q.metas)
        assert q.count_enq >= prev_enq and q.count_deq >= prev_deq
        prev_enq, prev_deq = q.count_enq, q.count_deq


@given(sizes=st.lists(st.integers(min_value=1, max_value=1500), min_size=1, max_size=50))
def test_dequeue_order_matches_arrival_order(sizes):
    q = FifoQueue()
    for i, size in enumerate(sizes):
        q.enqueue(_pkt(i, size), now=i)
    out = [q.dequeue_head(now=100)[0].id for _ in sizes]
    assert out == list(range(len(sizes)))
