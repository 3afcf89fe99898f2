"""Scenario files: TOML descriptions of a link, flows, and an AQM.

A scenario resolves human units (seconds, milliseconds, Mbit/s) into the
integer nanoseconds and bytes the simulator works in. Loading is strict:
unknown keys anywhere in the document are errors, and validation reports
every offending field at once rather than stopping at the first.

The resolved Scenario holds only plain configuration; ``build_dualq`` and
``build_flows`` construct fresh mutable state so repeated runs of one
Scenario object are independent and identical.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dualq import DelaySignal, DualQState, NativeAqm
from .endpoints import ClassicFlow, FlowSetup, ScalableFlow
from .marking import ByteRamp, PiState, RampParams, StepParams
from .queue import Duration, FifoQueue, SimTime
from .vq import DrainMode, VirtualQueueState, VqParams

NS_PER_MS = 1_000_000
NS_PER_SEC = 1_000_000_000


class ScenarioError(Exception):
    """Validation failure; ``errors`` lists every offending field."""

    def __init__(self, errors: list):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class VqMode(Enum):
    OFF = "off"
    BYTES = "bytes"
    SOJOURN = "sojourn"
    SCALED_SOJOURN = "scaled_sojourn"


_SIGNAL_FOR_MODE = {
    VqMode.OFF: DelaySignal.REAL,
    VqMode.BYTES: DelaySignal.BYTES,
    VqMode.SOJOURN: DelaySignal.VIRTUAL,
    VqMode.SCALED_SOJOURN: DelaySignal.SCALED_VIRTUAL,
}


@dataclass(frozen=True)
class LinkProfile:
    """Piecewise-constant link rate: ordered (start_time_ns, rate_bps)."""

    segments: tuple

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("link profile needs at least one segment")
        if self.segments[0][0] != 0:
            raise ValueError("first segment must start at time 0")
        prev = -1
        for start, rate in self.segments:
            if start <= prev:
                raise ValueError("segment start times must be strictly increasing")
            if rate <= 0:
                raise ValueError("link rates must be positive")
            prev = start

    def rate_at(self, now: SimTime) -> int:
        """Rate in bits/s of the segment covering ``now``."""
        rate = self.segments[0][1]
        for start, seg_rate in self.segments:
            if start > now:
                break
            rate = seg_rate
        return rate

    def boundaries(self) -> list:
        """(time, rate) pairs for every segment after the first."""
        return [(start, rate) for start, rate in self.segments[1:]]


@dataclass(frozen=True)
class PiConfig:
    target: Duration
    alpha: float
    beta: float
    update_interval: Duration

    def build(self) -> PiState:
        return PiState(
            target=self.target,
            alpha=self.alpha,
            beta=self.beta,
            update_interval=self.update_interval,
        )


@dataclass(frozen=True)
class AqmConfig:
    k: float = 2.0
    vq_mode: VqMode = VqMode.OFF
    lge: int = 6
    drain_mode: DrainMode = DrainMode.PROSE_UNDER_DRAIN
    native_kind: str = "step"  # step | ramp | pi | none
    floor_packets: int = 2  # guard for time-driven ramp/pi natives
    step: Optional[StepParams] = None
    ramp: Optional[RampParams] = None
    native_pi: Optional[PiConfig] = None
    base_pi: PiConfig = PiConfig(
        target=15 * NS_PER_MS, alpha=0.16, beta=3.2, update_interval=16 * NS_PER_MS
    )


@dataclass(frozen=True)
class FlowConfig:
    setup: FlowSetup
    initial_cwnd: int
    pacing: bool
    g: float


@dataclass(frozen=True)
class Scenario:
    duration: Duration
    seed: int
    mtu: int
    sample_interval: Duration
    link: LinkProfile
    flows: FlowConfig
    aqm: AqmConfig

    def build_dualq(self) -> DualQState:
        """Fresh queue/AQM state for one run."""
        aqm = self.aqm
        vq = None
        if aqm.vq_mode is not VqMode.OFF:
            vq = VirtualQueueState(VqParams(lge=aqm.lge, drain_mode=aqm.drain_mode))
        native: Optional[NativeAqm]
        if aqm.native_kind == "step":
            params = aqm.step if aqm.step is not None else StepParams(mtu=self.mtu)
            native = StepParams(
                threshold_t=params.threshold_t,
                mtu=params.mtu,
                floor_packets=params.floor_packets,
            )
        elif aqm.native_kind == "ramp":
            params = aqm.ramp if aqm.ramp is not None else RampParams()
            native = RampParams(
                t_min=params.t_min,
                t_max=params.t_max,
                max_p=params.max_p,
                derandomize=params.derandomize,
                byte_mode=params.byte_mode,
            )
        elif aqm.native_kind == "pi":
            cfg = aqm.native_pi if aqm.native_pi is not None else PiConfig(
                target=500_000, alpha=0.16, beta=3.2, update_interval=16 * NS_PER_MS
            )
            native = cfg.build()
        else:
            native = None
        return DualQState(
            lq=FifoQueue(),
            cq=FifoQueue(),
            base_aqm=aqm.base_pi.build(),
            native_aqm=native,
            k=aqm.k,
            vq=vq,
            signal=_SIGNAL_FOR_MODE[aqm.vq_mode],
            mtu=self.mtu,
            floor_packets=aqm.floor_packets,
        )

    def build_flows(self) -> list:
        """Fresh flow objects; scalable flows first, ids follow list order."""
        cfg = self.flows
        flows = []
        for i in range(cfg.setup.n_l + cfg.setup.n_c):
            if i < cfg.setup.n_l:
                flows.append(
                    ScalableFlow(
                        flow_id=i,
                        cwnd=cfg.initial_cwnd,
                        g=cfg.g,
                        base_rtt=cfg.setup.rtts[i],
                        pacing_enabled=cfg.pacing,
                        mtu=self.mtu,
                    )
                )
            else:
                flows.append(
                    ClassicFlow(
                        flow_id=i,
                        cwnd=cfg.initial_cwnd,
                        base_rtt=cfg.setup.rtts[i],
                        mtu=self.mtu,
                    )
                )
        return flows


_SCHEMA = {
    "duration_s": None,
    "seed": None,
    "mtu": None,
    "sample_interval_ms": None,
    "link": {"segments": [{"start_s": None, "rate_mbps": None}]},
    "flows": {
        "n_l": None,
        "n_c": None,
        "rtt_ms": None,
        "rtts_ms": None,
        "start_s": None,
        "start_times_s": None,
        "initial_cwnd_packets": None,
        "pacing": None,
        "g": None,
    },
    "aqm": {
        "k": None,
        "vq_mode": None,
        "lge": None,
        "drain_mode": None,
        "native": None,
        "floor_packets": None,
        "step": {"threshold_ms": None, "floor_packets": None},
        "ramp": {
            "t_min_ms": None,
            "t_max_ms": None,
            "max_p": None,
            "derandomize": None,
            "min_th_bytes": None,
            "max_th_bytes": None,
        },
        "pi": {"target_ms": None, "alpha": None, "beta": None, "update_interval_ms": None},
        "base": {"target_ms": None, "alpha": None, "beta": None, "update_interval_ms": None},
    },
}


def _unknown_keys(doc: Any, schema: Any, path: str, errors: list) -> None:
    if isinstance(schema, dict):
        if not isinstance(doc, dict):
            errors.append(f"{path or 'document'}: expected a table")
            return
        for key, value in doc.items():
            where = f"{path}.{key}" if path else key
            if key not in schema:
                errors.append(f"{where}: unknown key")
            else:
                _unknown_keys(value, schema[key], where, errors)
    elif isinstance(schema, list):
        if not isinstance(doc, list):
            errors.append(f"{path}: expected an array")
            return
        for i, item in enumerate(doc):
            _unknown_keys(item, schema[0], f"{path}[{i}]", errors)


def _ms(value: float) -> Duration:
    return round(value * NS_PER_MS)


def _sec(value: float) -> Duration:
    return round(value * NS_PER_SEC)


class _Reader:
    """Typed key access that records problems instead of raising."""

    def __init__(self, doc: dict, errors: list):
        self.doc = doc
        self.errors = errors

    def get(self, table: dict, key: str, kinds, default, where: str):
        if key not in table:
            return default
        value = table[key]
        if isinstance(value, bool) and bool not in (
            kinds if isinstance(kinds, tuple) else (kinds,)
        ):
            self.errors.append(f"{where}: expected {kinds}, got boolean")
            return default
        if not isinstance(value, kinds):
            self.errors.append(f"{where}: wrong type")
            return default
        return value


def parse_scenario(doc: dict) -> Scenario:
    """Resolve a parsed TOML document; raises ScenarioError on any problem."""
    errors: list = []
    _unknown_keys(doc, _SCHEMA, "", errors)
    r = _Reader(doc, errors)

    duration_s = r.get(doc, "duration_s", (int, float), None, "duration_s")
    if duration_s is None:
        errors.append("duration_s: required")
        duration_s = 1.0
    elif duration_s <= 0:
        errors.append("duration_s: must be positive")
        duration_s = 1.0
    seed = r.get(doc, "seed", int, 1, "seed")
    mtu = r.get(doc, "mtu", int, 1500, "mtu")
    if mtu < 64:
        errors.append("mtu: must be at least 64 bytes")
        mtu = 1500
    sample_ms = r.get(doc, "sample_interval_ms", (int, float), 10.0, "sample_interval_ms")
    if sample_ms <= 0:
        errors.append("sample_interval_ms: must be positive")
        sample_ms = 10.0

    link = _parse_link(doc.get("link"), r, errors)
    flows = _parse_flows(doc.get("flows"), r, errors, mtu)
    aqm = _parse_aqm(doc.get("aqm"), r, errors, mtu)

    if errors:
        raise ScenarioError(errors)
    return Scenario(
        duration=_sec(duration_s),
        seed=seed,
        mtu=mtu,
        sample_interval=_ms(sample_ms),
        link=link,
        flows=flows,
        aqm=aqm,
    )


def _parse_link(table, r: _Reader, errors: list) -> LinkProfile:
    fallback = LinkProfile(((0, 10_000_000),))
    if not isinstance(table, dict):
        errors.append("link: required table")
        return fallback
    segments = table.get("segments")
    if not isinstance(segments, list) or not segments:
        errors.append("link.segments: required non-empty array")
        return fallback
    resolved = []
    for i, seg in enumerate(segments):
        if not isinstance(seg, dict):
            errors.append(f"link.segments[{i}]: expected a table")
            continue
        start = r.get(seg, "start_s", (int, float), None, f"link.segments[{i}].start_s")
        rate = r.get(seg, "rate_mbps", (int, float), None, f"link.segments[{i}].rate_mbps")
        if start is None or rate is None:
            errors.append(f"link.segments[{i}]: needs start_s and rate_mbps")
            continue
        if rate <= 0:
            errors.append(f"link.segments[{i}].rate_mbps: must be positive")
            continue
        resolved.append((_sec(start), round(rate * 1_000_000)))
    if not resolved:
        return fallback
    try:
        return LinkProfile(tuple(resolved))
    except ValueError as exc:
        errors.append(f"link.segments: {exc}")
        return fallback


def _parse_flows(table, r: _Reader, errors: list, mtu: int) -> FlowConfig:
    if not isinstance(table, dict):
        errors.append("flows: required table")
        table = {}
    n_l = r.get(table, "n_l", int, 0, "flows.n_l")
    n_c = r.get(table, "n_c", int, 0, "flows.n_c")
    if n_l < 0 or n_c < 0:
        errors.append("flows.n_l/n_c: must be non-negative")
        n_l, n_c = max(n_l, 0), max(n_c, 0)
    n = n_l + n_c
    if n < 1:
        errors.append("flows: need at least one flow (n_l + n_c >= 1)")
        n_l, n = 1, 1

    rtts_ms = r.get(table, "rtts_ms", list, None, "flows.rtts_ms")
    if rtts_ms is not None:
        if len(rtts_ms) != n or not all(isinstance(x, (int, float)) and x > 0 for x in rtts_ms):
            errors.append("flows.rtts_ms: needs one positive entry per flow")
            rtts_ms = None
    if rtts_ms is None:
        rtt_ms = r.get(table, "rtt_ms", (int, float), 10.0, "flows.rtt_ms")
        if rtt_ms <= 0:
            errors.append("flows.rtt_ms: must be positive")
            rtt_ms = 10.0
        rtts = [_ms(rtt_ms)] * n
    else:
        rtts = [_ms(x) for x in rtts_ms]

    starts_s = r.get(table, "start_times_s", list, None, "flows.start_times_s")
    if starts_s is not None:
        if len(starts_s) != n or not all(
            isinstance(x, (int, float)) and x >= 0 for x in starts_s
        ):
            errors.append("flows.start_times_s: needs one non-negative entry per flow")
            starts_s = None
    if starts_s is None:
        start_s = r.get(table, "start_s", (int, float), 0.0, "flows.start_s")
        if start_s < 0:
            errors.append("flows.start_s: must be non-negative")
            start_s = 0.0
        starts = [_sec(start_s)] * n
    else:
        starts = [_sec(x) for x in starts_s]

    cwnd_pkts = r.get(table, "initial_cwnd_packets", int, 10, "flows.initial_cwnd_packets")
    if cwnd_pkts < 1:
        errors.append("flows.initial_cwnd_packets: must be at least 1")
        cwnd_pkts = 10
    pacing = r.get(table, "pacing", bool, True, "flows.pacing")
    g = r.get(table, "g", (int, float), 1.0 / 16.0, "flows.g")
    if not 0.0 < g <= 1.0:
        errors.append("flows.g: must be in (0, 1]")
        g = 1.0 / 16.0

    setup = FlowSetup(n_l=n_l, n_c=n_c, rtts=rtts, start_times=starts)
    return FlowConfig(setup=setup, initial_cwnd=cwnd_pkts * mtu, pacing=pacing, g=g)


def _parse_pi(table, r: _Reader, errors: list, where: str, default_target_ms: float) -> PiConfig:
    if table is None:
        table = {}
    target_ms = r.get(table, "target_ms", (int, float), default_target_ms, f"{where}.target_ms")
    alpha = r.get(table, "alpha", (int, float), 0.16, f"{where}.alpha")
    beta = r.get(table, "beta", (int, float), 3.2, f"{where}.beta")
    interval_ms = r.get(
        table, "update_interval_ms", (int, float), 16.0, f"{where}.update_interval_ms"
    )
    if target_ms <= 0:
        errors.append(f"{where}.target_ms: must be positive")
        target_ms = default_target_ms
    if interval_ms <= 0:
        errors.append(f"{where}.update_interval_ms: must be positive")
        interval_ms = 16.0
    return PiConfig(
        target=_ms(target_ms), alpha=alpha, beta=beta, update_interval=_ms(interval_ms)
    )


def _parse_aqm(table, r: _Reader, errors: list, mtu: int) -> AqmConfig:
    if table is None:
        table = {}
    if not isinstance(table, dict):
        errors.append("aqm: expected a table")
        table = {}
    k = r.get(table, "k", (int, float), 2.0, "aqm.k")
    if k <= 0:
        errors.append("aqm.k: must be positive")
        k = 2.0
    mode_str = r.get(table, "vq_mode", str, "off", "aqm.vq_mode")
    try:
        vq_mode = VqMode(mode_str)
    except ValueError:
        errors.append("aqm.vq_mode: must be one of off, bytes, sojourn, scaled_sojourn")
        vq_mode = VqMode.OFF
    lge = r.get(table, "lge", int, 6, "aqm.lge")
    if not 1 <= lge <= 16:
        errors.append("aqm.lge: must be in [1, 16]")
        lge = 6
    drain_str = r.get(table, "drain_mode", str, "under", "aqm.drain_mode")
    try:
        drain_mode = DrainMode(drain_str)
    except ValueError:
        errors.append("aqm.drain_mode: must be 'under' or 'literal'")
        drain_mode = DrainMode.PROSE_UNDER_DRAIN
    native_kind = r.get(table, "native", str, "step", "aqm.native")
    if native_kind not in ("step", "ramp", "pi", "none"):
        errors.append("aqm.native: must be one of step, ramp, pi, none")
        native_kind = "step"
    floor_packets = r.get(table, "floor_packets", int, 2, "aqm.floor_packets")
    if floor_packets < 0:
        errors.append("aqm.floor_packets: must be non-negative")
        floor_packets = 2

    step = None
    if native_kind == "step":
        st = table.get("step") or {}
        threshold_ms = r.get(st, "threshold_ms", (int, float), 1.0, "aqm.step.threshold_ms")
        step_floor = r.get(st, "floor_packets", int, 2, "aqm.step.floor_packets")
        if threshold_ms <= 0:
            errors.append("aqm.step.threshold_ms: must be positive")
            threshold_ms = 1.0
        if step_floor < 0:
            errors.append("aqm.step.floor_packets: must be non-negative")
            step_floor = 2
        step = StepParams(threshold_t=_ms(threshold_ms), mtu=mtu, floor_packets=step_floor)

    ramp = None
    if native_kind == "ramp":
        rt = table.get("ramp") or {}
        t_min_ms = r.get(rt, "t_min_ms", (int, float), 0.5, "aqm.ramp.t_min_ms")
        t_max_ms = r.get(rt, "t_max_ms", (int, float), 1.5, "aqm.ramp.t_max_ms")
        max_p = r.get(rt, "max_p", (int, float), 1.0, "aqm.ramp.max_p")
        derandomize = r.get(rt, "derandomize", bool, True, "aqm.ramp.derandomize")
        min_th = r.get(rt, "min_th_bytes", int, None, "aqm.ramp.min_th_bytes")
        max_th = r.get(rt, "max_th_bytes", int, None, "aqm.ramp.max_th_bytes")
        byte_mode = None
        if (min_th is None) != (max_th is None):
            errors.append("aqm.ramp: min_th_bytes and max_th_bytes go together")
        elif min_th is not None:
            try:
                byte_mode = ByteRamp(min_th=min_th, max_th=max_th, mtu=mtu)
            except ValueError as exc:
                errors.append(f"aqm.ramp: {exc}")
        try:
            ramp = RampParams(
                t_min=_ms(t_min_ms),
                t_max=_ms(t_max_ms),
                max_p=max_p,
                derandomize=derandomize,
                byte_mode=byte_mode,
            )
        except ValueError as exc:
            errors.append(f"aqm.ramp: {exc}")
            ramp = RampParams()

    native_pi = None
    if native_kind == "pi":
        native_pi = _parse_pi(table.get("pi"), r, errors, "aqm.pi", 0.5)

    base_pi = _parse_pi(table.get("base"), r, errors, "aqm.base", 15.0)

    if vq_mode is VqMode.BYTES and not (
        native_kind == "ramp" and ramp is not None and ramp.byte_mode is not None
    ):
        errors.append(
            "aqm.vq_mode: 'bytes' provides only a byte count; "
            "the native policy must be a byte-mode ramp"
        )

    return AqmConfig(
        k=k,
        vq_mode=vq_mode,
        lge=lge,
        drain_mode=drain_mode,
        native_kind=native_kind,
        floor_packets=floor_packets,
        step=step,
        ramp=ramp,
        native_pi=native_pi,
        base_pi=base_pi,
    )


def loads(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"TOML syntax: {exc}"]) from exc
    return parse_scenario(doc)


def load_scenario(path: str) -> Scenario:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError([f"TOML syntax: {exc}"]) from exc
    return parse_scenario(doc)


def apply_override(doc: dict, dotted_key: str, value: Any) -> None:
    """Set a scalar at a dotted path in a raw TOML document (for sweeps)."""
    parts = dotted_key.split(".")
    node = doc
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[parts[-1]] = value


def coerce_value(text: str) -> Any:
    """Best-effort scalar parse for sweep values: int, float, bool, string."""
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text.strip()
