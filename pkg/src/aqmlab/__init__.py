"""Packet-level laboratory for low-latency AQM designs.

A dual-queue coupled AQM with native low-latency policies (step, ramp,
PI) driven by real, virtual, or scaled-virtual queue delay, plus a
deterministic discrete-event simulator and closed-loop traffic sources
to exercise them.
"""

from .dualq import (
    DelaySignal,
    DualQState,
    classic_drop_prob,
    classify,
    coupled_l4s_prob,
    l4s_dequeue_decide,
    schedule_next,
)
from .endpoints import (
    ClassicFlow,
    FlowSetup,
    ScalableFlow,
    classic_on_ack,
    pace_next_send,
    scalable_on_ack,
)
from .marking import (
    ByteRamp,
    CreditState,
    MarkDecision,
    PiState,
    RampParams,
    StepParams,
    pi_mark_interval,
    pi_update,
    ramp_decide,
    ramp_probability,
    step_decide,
)
from .queue import Duration, FifoQueue, Packet, PacketMeta, SimTime, TrafficClass
from .scenario import LinkProfile, Scenario, ScenarioError, VqMode, load_scenario
from .sim import RunResult, link_service, run, summarize, write_metrics_csv
from .vq import ByteVq, DrainMode, VirtualQueueState, VqParams, idle_drain_bytes, virtual_drain_bytes

__version__ = "0.1.0"

__all__ = [
    "ByteRamp",
    "ByteVq",
    "ClassicFlow",
    "CreditState",
    "DelaySignal",
    "DrainMode",
    "DualQState",
    "Duration",
    "FifoQueue",
    "FlowSetup",
    "LinkProfile",
    "MarkDecision",
    "Packet",
    "PacketMeta",
    "PiState",
    "RampParams",
    "RunResult",
    "ScalableFlow",
    "Scenario",
    "ScenarioError",
    "SimTime",
    "StepParams",
    "TrafficClass",
    "VirtualQueueState",
    "VqMode",
    "VqParams",
    "classic_drop_prob",
    "classic_on_ack",
    "classify",
    "coupled_l4s_prob",
    "idle_drain_bytes",
    "l4s_dequeue_decide",
    "link_service",
    "load_scenario",
    "pace_next_send",
    "pi_mark_interval",
    "pi_update",
    "ramp_decide",
    "ramp_probability",
    "run",
    "scalable_on_ack",
    "schedule_next",
    "step_decide",
    "summarize",
    "virtual_drain_bytes",
    "write_metrics_csv",
]
