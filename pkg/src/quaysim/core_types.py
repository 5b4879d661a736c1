"""Shared domain vocabulary: time, cycles, flows, packets, chain and cluster specs.

Time is integer nanoseconds since the simulation epoch and CPU work is counted
in cycles. ``cycles_to_ns`` is the only place the two are bridged.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

TimeNs = int
Cycles = int

NS_PER_S = 1_000_000_000
NS_PER_US = 1_000
NS_PER_MS = 1_000_000

MIN_PACKET_BYTES = 64
MAX_PACKET_BYTES = 1500


class ValidationError(ValueError):
    """Raised when a spec violates one or more invariants.

    ``errors`` holds every violation found, not only the first one.
    """

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def cycles_to_ns(c: float, freq_hz: int) -> TimeNs:
    """Convert a cycle count to nanoseconds at ``freq_hz``, rounded to nearest."""
    if freq_hz <= 0:
        raise ValueError("freq_hz must be positive")
    if isinstance(c, int) and isinstance(freq_hz, int):
        # exact half-up rounding, no float drift for large counts
        return (2 * c * NS_PER_S + freq_hz) // (2 * freq_hz)
    return int(round(c * NS_PER_S / freq_hz))


class FlowKey(NamedTuple):
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    proto: int = 17


class BufferId(NamedTuple):
    """A packet buffer: the NIC VF buffer or the shared chain buffer of one instance."""

    kind: str  # "nic" | "chain"
    instance: int


def nic_buffer(instance: int) -> BufferId:
    return BufferId("nic", instance)


def chain_buffer(instance: int) -> BufferId:
    return BufferId("chain", instance)


@dataclass(slots=True)
class PacketRec:
    id: int
    flow: FlowKey
    size_bytes: int
    arrival_ts: TimeNs
    owner: Optional[BufferId] = None

    def __post_init__(self):
        if not MIN_PACKET_BYTES <= self.size_bytes <= MAX_PACKET_BYTES:
            raise ValueError(f"packet size {self.size_bytes} outside [64, 1500]")


@dataclass(frozen=True)
class NfProfile:
    """One network function and its per-packet service cost.

    The cost is ``base_cycles + per_byte_cycles * size`` (constant when
    ``per_byte_cycles`` is zero). ``stuck`` marks an NF that never yields,
    used to exercise the scheduler watchdog.
    """

    name: str
    base_cycles: int
    per_byte_cycles: float = 0.0
    stateful: bool = False
    stuck: bool = False

    def service_cost(self, size_bytes: int) -> Cycles:
        return int(round(self.base_cycles + self.per_byte_cycles * size_bytes))


@dataclass(frozen=True)
class TrafficFilter:
    """Prefix/range match over a 5-tuple. ``None`` fields match anything."""

    src_prefix: Optional[str] = None
    dst_prefix: Optional[str] = None
    src_ports: Optional[tuple[int, int]] = None
    dst_ports: Optional[tuple[int, int]] = None
    proto: Optional[int] = None

    def __post_init__(self):
        # parse once; raises ValueError on malformed prefixes
        nets = tuple(
            ipaddress.ip_network(p, strict=False) if p is not None else None
            for p in (self.src_prefix, self.dst_prefix)
        )
        object.__setattr__(self, "_nets", nets)

    def matches(self, flow: FlowKey) -> bool:
        src_net, dst_net = self._nets
        if self.proto is not None and flow.proto != self.proto:
            return False
        if self.src_ports is not None and not self.src_ports[0] <= flow.src_port <= self.src_ports[1]:
            return False
        if self.dst_ports is not None and not self.dst_ports[0] <= flow.dst_port <= self.dst_ports[1]:
            return False
        if src_net is not None and ipaddress.ip_address(flow.src_ip) not in src_net:
            return False
        if dst_net is not None and ipaddress.ip_address(flow.dst_ip) not in dst_net:
            return False
        return True


@dataclass(frozen=True)
class ChainSpec:
    chain_id: str
    nfs: tuple[NfProfile, ...]
    traffic_filter: TrafficFilter = field(default_factory=TrafficFilter)
    slo_p99_ns: TimeNs = 100 * NS_PER_US
    # per-core load threshold; None means "pick from the profile curve"
    load_threshold: Optional[float] = None
    # rate-ratio target for adaptive batch sizing
    batch_p: float = 0.95

    @property
    def length(self) -> int:
        return len(self.nfs)


@dataclass(frozen=True)
class WorkerSpec:
    worker_id: str
    num_cores: int
    freq_hz: int = 2_400_000_000
    nic_rate_bps: int = 10_000_000_000
    vf_queue_capacity: int = 128
    max_batch: int = 32
    # how many sgroups (active or pre-deployed) the worker can host
    max_sgroups: Optional[int] = None

    @property
    def sgroup_capacity(self) -> int:
        return self.max_sgroups if self.max_sgroups is not None else 2 * self.num_cores


@dataclass(frozen=True)
class CostConstants:
    """Measured per-operation costs in cycles."""

    t_ctx: int = 2143
    copy_small_bytes: int = 100
    copy_small_cycles: int = 247
    copy_large_bytes: int = 1500
    copy_large_cycles: int = 467
    per_hop_overhead: float = 50.8
    warmup: int = 100
    unmap: int = 4083
    map: int = 8495


@dataclass(frozen=True)
class ScalingConfig:
    scale_out_thresh: int = 1
    scale_in_thresh: int = 2
    loop_period_ns: TimeNs = 10 * NS_PER_MS
    idle_window_ns: TimeNs = 100 * NS_PER_MS
    install_latency_ns: TimeNs = 5 * NS_PER_MS
    yield_timeout_ns: TimeNs = 10 * NS_PER_MS
    default_load_threshold: float = 0.8


@dataclass(frozen=True)
class MonitoringConfig:
    period_ns: TimeNs = 100 * NS_PER_MS
    epsilon: float = 0.05
    queue_mark: int = 64


@dataclass(frozen=True)
class StateConfig:
    remote_latency_ns: TimeNs = 310 * NS_PER_US
    sync_period_ns: TimeNs = 100 * NS_PER_MS


@dataclass(frozen=True)
class ClusterSpec:
    workers: tuple[WorkerSpec, ...]
    chains: tuple[ChainSpec, ...]
    costs: CostConstants = field(default_factory=CostConstants)
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    monitoring: MonitoringConfig = field(default_factory=MonitoringConfig)
    state: StateConfig = field(default_factory=StateConfig)


def _duplicates(ids) -> list:
    seen, dups = set(), []
    for i in ids:
        if i in seen and i not in dups:
            dups.append(i)
        seen.add(i)
    return dups


def validate_cluster_spec(spec: ClusterSpec) -> ClusterSpec:
    """Return ``spec`` unchanged if valid, else raise ValidationError listing every violation."""
    errors: list[str] = []
    if not spec.workers:
        errors.append("no workers")
    if not spec.chains:
        errors.append("no chains")
    for wid in _duplicates(w.worker_id for w in spec.workers):
        errors.append(f"duplicate id: worker {wid!r}")
    for cid in _duplicates(c.chain_id for c in spec.chains):
        errors.append(f"duplicate id: chain {cid!r}")
    for w in spec.workers:
        if w.num_cores < 1:
            errors.append(f"zero cores: worker {w.worker_id!r}")
        if w.freq_hz <= 0:
            errors.append(f"non-positive freq_hz: worker {w.worker_id!r}")
        if w.max_batch < 1:
            errors.append(f"max_batch < 1: worker {w.worker_id!r}")
        if w.vf_queue_capacity < 1:
            errors.append(f"vf_queue_capacity < 1: worker {w.worker_id!r}")
        if w.sgroup_capacity < 1:
            errors.append(f"max_sgroups < 1: worker {w.worker_id!r}")
    for c in spec.chains:
        if not c.nfs:
            errors.append(f"empty chain: {c.chain_id!r}")
        for nf in c.nfs:
            if nf.base_cycles <= 0 or nf.per_byte_cycles < 0:
                errors.append(f"non-positive cost: {c.chain_id!r}/{nf.name}")
            elif nf.service_cost(MIN_PACKET_BYTES) <= 0:
                errors.append(f"non-positive cost: {c.chain_id!r}/{nf.name}")
        if c.slo_p99_ns <= 0:
            errors.append(f"non-positive slo: {c.chain_id!r}")
        if c.load_threshold is not None and not 0 < c.load_threshold <= 1.5:
            errors.append(f"load_threshold out of range: {c.chain_id!r}")
        if not 0 < c.batch_p < 1:
            errors.append(f"batch_p must be in (0,1): {c.chain_id!r}")
    costs = spec.costs
    if costs.t_ctx < 0 or costs.per_hop_overhead < 0 or costs.warmup < 0:
        errors.append("negative cost constant")
    if costs.copy_small_cycles <= 0 or costs.copy_large_cycles < costs.copy_small_cycles:
        errors.append("copy cost endpoints must be positive and non-decreasing")
    sc = spec.scaling
    if sc.scale_out_thresh < 0 or sc.scale_out_thresh > sc.scale_in_thresh:
        errors.append("scale thresholds require 0 <= scale_out_thresh <= scale_in_thresh")
    if sc.loop_period_ns <= 0 or spec.monitoring.period_ns <= 0:
        errors.append("periods must be positive")
    if spec.state.sync_period_ns <= 0 or spec.state.remote_latency_ns < 0:
        errors.append("invalid state store config")
    if errors:
        raise ValidationError(errors)
    return spec
