"""FIFO packet queue with per-packet timestamps and cumulative byte counters.

This is the substrate shared by the real queues and the virtual-queue
overlay: packets, their metadata (size, enqueue time), and the
``count_enq``/``count_deq`` byte counters from which backlog is derived.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

# Simulation time and durations are integer nanoseconds throughout; no
# floating-point time anywhere in the hot path.
SimTime = int
Duration = int

NS_PER_SEC = 1_000_000_000


class TrafficClass(Enum):
    L4S = "L4S"
    CLASSIC = "Classic"


@dataclass
class Packet:
    """A simulated packet; ``marked`` and ``dropped`` are never both set."""

    id: int
    flow_id: int
    size: int  # bytes, >= 1
    traffic_class: TrafficClass
    marked: bool = False
    dropped: bool = False

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError(f"packet size must be >= 1, got {self.size}")


@dataclass
class PacketMeta:
    """Per-packet metadata: size, enqueue timestamp, enqueue-backlog width.

    ``size`` may be smaller than the original packet once the packet sits at
    the head of a virtual queue and has been partially consumed.
    ``vbacklog_enq_width`` is the bit-width of the virtual backlog seen at
    enqueue (0 when the backlog was empty or the overlay is unused); storing
    the width instead of the backlog keeps the field under 8 bits.
    """

    size: int
    enq_time: SimTime
    vbacklog_enq_width: int = 0


class FifoQueue:
    """Byte-counted FIFO of packets with aligned metadata.

    backlog == count_enq - count_deq == sum of queued packet sizes, always.
    ``head`` is the absolute index of the current head packet, i.e. the
    number of packets dequeued so far.
    """

    def __init__(self, capacity_bytes: Optional[int] = None):
        self.packets: deque[Packet] = deque()
        self.metas: deque[PacketMeta] = deque()
        self.count_enq: int = 0
        self.count_deq: int = 0
        self.head: int = 0
        self.capacity_bytes = capacity_bytes

    def __len__(self) -> int:
        return len(self.packets)

    @property
    def backlog_bytes(self) -> int:
        return self.count_enq - self.count_deq

    def enqueue(self, p: Packet, now: SimTime) -> bool:
        """Append ``p``; returns False (tail drop) if the byte cap is exceeded.

        On a drop the packet is flagged ``dropped`` and no counter moves.
        """
        if (
            self.capacity_bytes is not None
            and self.backlog_bytes + p.size > self.capacity_bytes
        ):
            p.dropped = True
            return False
        self.packets.append(p)
        self.metas.append(PacketMeta(size=p.size, enq_time=now))
        self.count_enq += p.size
        return True

    def dequeue_head(self, now: SimTime) -> tuple[Packet, Duration]:
        """Remove and return the head packet and its sojourn time.

        Raises IndexError on an empty queue; the caller decides what an
        empty queue means.
        """
        if not self.packets:
            raise IndexError("dequeue from empty queue")
        p = self.packets.popleft()
        meta = self.metas.popleft()
        self.count_deq += p.size
        self.head += 1
        return p, now - meta.enq_time

    def head_sojourn(self, now: SimTime) -> Optional[Duration]:
        """Age of the head packet without dequeuing it; None when empty."""
        if not self.metas:
            return None
        return now - self.metas[0].enq_time
