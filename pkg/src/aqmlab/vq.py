"""Virtual queue implementations.

Three related mechanisms that let an AQM signal congestion as if the link
were slightly slower than it really is:

* ``ByteVq`` - the virtual queue as a single byte counter: add the packet
  size on enqueue, subtract slightly less (or more, see ``DrainMode``) on
  dequeue, floor at zero.
* ``VirtualQueueState`` - virtual *sojourn time*: packet metadata is kept
  after the real packet has been forwarded, so the run of metadata from
  ``vhead`` to the tail is the virtual queue, and the age of the meta at
  ``vhead`` is the virtual sojourn time.
* scaled virtual sojourn - the sojourn additionally scaled by the ratio of
  the virtual backlog now to the virtual backlog when the head packet was
  enqueued, approximated by a power-of-two shift from bit-width
  differences so only an under-8-bit width is stored per packet.

The drain fraction is expressed as ``lge`` = log2(1/epsilon): a dequeue of
``s`` real bytes drains ``s - (s >> lge)`` virtual bytes, so the virtual
server runs at (1 - 1/2**lge) of the real link rate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .queue import Duration, PacketMeta, SimTime, NS_PER_SEC


class DrainMode(Enum):
    """Sign of the per-dequeue drain adjustment.

    PROSE_UNDER_DRAIN removes less than the real packet size, which makes
    the virtual queue the longer one and yields the sub-capacity operating
    point; LITERAL_PSEUDOCODE removes more, kept only for side-by-side
    comparison of the two published update rules.
    """

    PROSE_UNDER_DRAIN = "under"
    LITERAL_PSEUDOCODE = "literal"


@dataclass
class VqParams:
    lge: int = 6  # log2(1/epsilon); 6 -> virtual rate 63/64 of real
    drain_mode: DrainMode = DrainMode.PROSE_UNDER_DRAIN
    idle_drain: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.lge <= 16:
            raise ValueError(f"lge must be in [1, 16], got {self.lge}")

    @property
    def epsilon(self) -> Fraction:
        return Fraction(1, 2**self.lge)


def idle_drain_bytes(elapsed: Duration, link_rate_bytes_per_s: int, params: VqParams) -> int:
    """Virtual bytes drained over an idle interval: floor(elapsed·R·(1∓ε))."""
    m = 1 << params.lge
    factor = m - 1 if params.drain_mode is DrainMode.PROSE_UNDER_DRAIN else m + 1
    return elapsed * link_rate_bytes_per_s * factor // (m * NS_PER_SEC)


def virtual_drain_bytes(size: int, params: VqParams) -> int:
    """Virtual bytes to drain when ``size`` real bytes are dequeued."""
    if params.drain_mode is DrainMode.PROSE_UNDER_DRAIN:
        return size - (size >> params.lge)
    return size + (size >> params.lge)


@dataclass
class ByteVq:
    """Virtual queue as a single byte count."""

    params: VqParams = field(default_factory=VqParams)
    vlen: int = 0

    def on_enqueue(self, size: int) -> None:
        self.vlen += size

    def on_dequeue(self, size: int) -> int:
        return self.drain(virtual_drain_bytes(size, self.params))

    def drain(self, nbytes: int) -> int:
        drained = min(nbytes, self.vlen)
        self.vlen -= drained
        return drained

    def idle_drain(self, elapsed: Duration, link_rate_bytes_per_s: int) -> int:
        if not self.params.idle_drain:
            return 0
        return self.drain(idle_drain_bytes(elapsed, link_rate_bytes_per_s, self.params))


class VirtualQueueState:
    """Virtual sojourn time via deferred deletion of packet metadata.

    ``metas`` holds the metadata from the virtual head to the tail; the
    leading entries describe packets already forwarded by the real queue
    (the deferred region). ``vhead`` counts metas fully consumed so far,
    i.e. the absolute index of the current virtual head. The head meta's
    ``size`` shrinks as virtual bytes are drained; a fully consumed head is
    removed immediately so an empty backlog never leaves a stale timestamp
    behind.

    Counter invariant: count_enq - vcount_deq == sum of meta sizes, exactly.
    """

    def __init__(self, params: VqParams | None = None):
        self.params = params or VqParams()
        self.metas: deque[PacketMeta] = deque()
        self.vhead: int = 0
        self.count_enq: int = 0
        self.vcount_deq: int = 0
        # Exact enqueue backlogs, aligned with metas; feeds the exact-ratio
        # scaling variant, which only exists in simulation.
        self._enq_backlogs: deque[int] = deque()

    @property
    def vbacklog(self) -> int:
        return self.count_enq - self.vcount_deq

    def is_empty(self) -> bool:
        return self.vbacklog == 0

    def on_enqueue(self, size: int, now: SimTime) -> None:
        """Append metadata for a newly enqueued packet.

        The bit-width of the virtual backlog as seen on arrival (before the
        packet's own bytes are counted) is stored with the metadata for the
        scaled-sojourn variant; width 0 marks an arrival into an empty queue.
        """
        backlog = self.vbacklog
        self.metas.append(
            PacketMeta(size=size, enq_time=now, vbacklog_enq_width=backlog.bit_length())
        )
        self._enq_backlogs.append(backlog)
        self.count_enq += size

    def virtual_sojourn(self, now: SimTime) -> Duration:
        """Age of the virtual head packet; 0 when the virtual queue is empty."""
        if self.is_empty():
            return 0
        return now - self.metas[0].enq_time

    def scaled_virtual_sojourn(self, now: SimTime) -> Duration:
        """Virtual sojourn scaled by the ratio of virtual backlogs.

        The ratio backlog-at-dequeue / backlog-at-enqueue is approximated by
        2**(width(vbacklog_deq) - width stored at enqueue), i.e. the
        leading-zero-count difference of equal-width integers, applied as a
        shift. Either backlog being zero leaves the sojourn unscaled.
        """
        if self.is_empty():
            return 0
        vtsojourn = now - self.metas[0].enq_time
        enq_width = self.metas[0].vbacklog_enq_width
        deq_width = self.vbacklog.bit_length()
        if enq_width == 0 or deq_width == 0:
            return vtsojourn
        shift = deq_width - enq_width
        if shift >= 0:
            return vtsojourn << shift
        return vtsojourn >> -shift

    def scaled_virtual_sojourn_exact(self, now: SimTime) -> Duration:
        """Reference variant scaling by the exact backlog ratio.

        Same zero special cases as the shift approximation; the division is
        floored to stay in integer nanoseconds.
        """
        if self.is_empty():
            return 0
        vtsojourn = now - self.metas[0].enq_time
        enq_backlog = self._enq_backlogs[0]
        if enq_backlog == 0:
            return vtsojourn
        return vtsojourn * self.vbacklog // enq_backlog

    def on_dequeue(self, real_size: int) -> int:
        """Dequeue the virtual counterpart of a just-forwarded real packet.

        Drains ``real_size`` adjusted by the drain mode: whole head metas are
        removed while the amount left to drain covers them, then the
        remainder is taken off the new head's size. Returns the number of
        virtual bytes actually drained (capped so the backlog floors at 0).
        """
        return self._drain(virtual_drain_bytes(real_size, self.params))

    def idle_drain(self, elapsed: Duration, link_rate_bytes_per_s: int) -> int:
        """Drain for an idle real queue: elapsed time worth of virtual service.

        The real queue being empty does not stop the virtual server, which
        keeps running at its fraction of the link rate. Returns bytes drained.
        """
        if not self.params.idle_drain:
            return 0
        return self._drain(idle_drain_bytes(elapsed, link_rate_bytes_per_s, self.params))

    def drain(self, vs: int) -> int:
        """Remove up to ``vs`` virtual bytes directly; returns bytes drained.

        The simulator uses this to apply idle service anchored to an exact
        interval start, so repeated flooring cannot accumulate drift.
        """
        return self._drain(vs)

    def _drain(self, vs: int) -> int:
        drained = min(vs, self.vbacklog)
        self.vcount_deq += drained
        vs = drained
        while self.metas and vs >= self.metas[0].size:
            vs -= self.metas[0].size
            self.metas.popleft()
            self._enq_backlogs.popleft()
            self.vhead += 1
        if vs:
            self.metas[0].size -= vs
        return drained

    def check_consistency(self) -> None:
        """Assert the exact counter/meta invariant; used in debug runs."""
        total = sum(m.size for m in self.metas)
        if total != self.vbacklog:
            raise AssertionError(
                f"virtual backlog {self.vbacklog} != meta sum {total}"
            )
        if self.vbacklog < 0:
            raise AssertionError("negative virtual backlog")
