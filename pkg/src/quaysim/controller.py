"""Controller: monitoring, load thresholds, idle-pool scaling and core reclamation.

The controller keeps one :class:`LogicalChain` per chain spec. Each holds the
active instances (serving flows) and an idle pool of pre-deployed, detached
instances that cost no CPU. New flows fill the most loaded non-overloaded
instance; the pool is topped up or trimmed after every assignment, and the
per-worker loop attaches newly active instances and detaches idle ones.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .coop_sched import (
    CoopScheduler,
    SchedulerError,
    SGroup,
    SGroupState,
    attach_sgroup,
    detach_sgroup,
    register_sgroup,
    unregister_sgroup,
)
from .core_types import ChainSpec, MonitoringConfig, ScalingConfig, TimeNs, WorkerSpec
from .ingress import Assignment, NoCapacity, handle_new_flow

log = logging.getLogger(__name__)

LOAD_REPORT_CAP = 1.5


class InfeasibleSLO(UserWarning):
    """No profiled threshold meets the SLO; the lowest one is used."""


@dataclass
class ChainStats:
    instance: int
    packet_rate: float
    queue_len: int
    per_batch_exec: float = 0.0
    last_report: TimeNs = 0


def chain_load(stats: ChainStats, max_rate: float) -> float:
    if max_rate <= 0:
        raise ValueError("max_rate must be positive")
    return min(max(stats.packet_rate / max_rate, 0.0), LOAD_REPORT_CAP)


class Monitor:
    """Forwards stats only on significant change; counts what it suppresses."""

    def __init__(self, config: MonitoringConfig = MonitoringConfig()):
        self.config = config
        self.reported: dict[int, ChainStats] = {}
        self.accepted = 0
        self.suppressed = 0

    def on_stats_update(self, stats: ChainStats) -> bool:
        prev = self.reported.get(stats.instance)
        if prev is None or self._significant(prev, stats):
            self.reported[stats.instance] = stats
            self.accepted += 1
            return True
        self.suppressed += 1
        return False

    def _significant(self, prev: ChainStats, cur: ChainStats) -> bool:
        if abs(cur.packet_rate - prev.packet_rate) / max(prev.packet_rate, 1.0) >= self.config.epsilon:
            return True
        mark = self.config.queue_mark
        return (prev.queue_len >= mark) != (cur.queue_len >= mark)

    def rate(self, instance: int) -> float:
        s = self.reported.get(instance)
        return 0.0 if s is None else s.packet_rate

    def forget(self, instance: int) -> None:
        self.reported.pop(instance, None)


@dataclass(frozen=True)
class ProfileRow:
    threshold_pct: int
    p99_ns: int
    max_qlen: int
    rate_pps: float


@dataclass
class ProfileCurve:
    rows: list[ProfileRow]
    # saturated single-core throughput the thresholds are fractions of
    max_rate: float = 0.0

    def __post_init__(self):
        pcts = [r.threshold_pct for r in self.rows]
        if any(b <= a for a, b in zip(pcts, pcts[1:])):
            raise ValueError("profile thresholds must be strictly increasing")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold_pct", "p99_ns", "max_qlen", "rate_pps"])
            for r in self.rows:
                w.writerow([r.threshold_pct, r.p99_ns, r.max_qlen, repr(float(r.rate_pps))])

    @classmethod
    def from_csv(cls, path) -> "ProfileCurve":
        with open(path, newline="") as fh:
            rows = [ProfileRow(int(r["threshold_pct"]), int(r["p99_ns"]), int(r["max_qlen"]),
                               float(r["rate_pps"])) for r in csv.DictReader(fh)]
        return cls(rows)


def pick_load_threshold(curve: ProfileCurve, slo_p99: TimeNs) -> int:
    """Highest threshold whose p99 fits the SLO, in percent."""
    if not curve.rows:
        raise ValueError("empty profile curve")
    ok = [r.threshold_pct for r in curve.rows if r.p99_ns <= slo_p99]
    if ok:
        return max(ok)
    lowest = min(r.threshold_pct for r in curve.rows)
    warnings.warn(f"no threshold meets p99 <= {slo_p99} ns; using {lowest}%", InfeasibleSLO)
    return lowest


@dataclass
class LogicalChain:
    spec: ChainSpec
    threshold: float
    max_rate: float
    active: list = field(default_factory=list)
    idle: list = field(default_factory=list)


class WorkerRuntime:
    def __init__(self, spec: WorkerSpec):
        self.spec = spec
        self.sched = CoopScheduler(spec.worker_id, spec.num_cores, spec.freq_hz)

    @property
    def sgroups(self) -> list[SGroup]:
        return [self.sched.sgroups[k] for k in sorted(self.sched.sgroups)]

    def load(self) -> float:
        active = sum(1 for sg in self.sched.sgroups.values() if sg.active)
        return active / self.spec.num_cores

    def has_capacity(self) -> bool:
        return len(self.sched.sgroups) < self.spec.sgroup_capacity


@dataclass
class LoopAction:
    kind: str  # "attach" | "detach" | "drain" | "defer"
    instance: int
    core_id: str = ""


class Controller:
    def __init__(self, workers: Sequence[WorkerSpec], scaling: ScalingConfig = ScalingConfig(),
                 monitoring: MonitoringConfig = MonitoringConfig(), vf_capacity: Optional[int] = None):
        self.scaling = scaling
        self.monitor = Monitor(monitoring)
        self.workers = [WorkerRuntime(w) for w in workers]
        self.chains: dict[str, LogicalChain] = {}
        self.instances: dict[int, SGroup] = {}
        self.batch_multipliers: dict[str, int] = {}
        self.faults: dict[str, int] = {}
        # (time, chain_id, idle pool size) after every scaling loop quiesces
        self.pool_trace: list[tuple[TimeNs, str, int]] = []
        # (time, instance, load at decision, chain id)
        self.assignments: list[tuple[TimeNs, int, float, str]] = []
        self._next_id = 0
        self._vf_capacity = vf_capacity

    def fault(self, kind: str) -> None:
        self.faults[kind] = self.faults.get(kind, 0) + 1

    def add_chain(self, spec: ChainSpec, threshold: float, max_rate: float,
                  batch_multiplier: int = 1) -> LogicalChain:
        lc = LogicalChain(spec, threshold, max_rate)
        self.chains[spec.chain_id] = lc
        self.batch_multipliers[spec.chain_id] = batch_multiplier
        return lc

    def worker_of(self, sg: SGroup) -> WorkerRuntime:
        for w in self.workers:
            if w.spec.worker_id == sg.worker_id:
                return w
        raise KeyError(sg.worker_id)

    def load(self, sg: SGroup) -> float:
        lc = self.chains[sg.chain.chain_id]
        return min(self.monitor.rate(sg.instance) / lc.max_rate, LOAD_REPORT_CAP)

    # -- scaling -----------------------------------------------------------

    def scale_out(self, lc: LogicalChain) -> Optional[SGroup]:
        """Pre-deploy one detached instance on the least loaded worker with room."""
        candidates = [w for w in self.workers if w.has_capacity()]
        if not candidates:
            self.fault("scale_out_no_capacity")
            return None
        w = min(candidates, key=lambda w: (w.load(), len(w.sched.sgroups), w.spec.worker_id))
        cap = self._vf_capacity or w.spec.vf_queue_capacity
        sg = SGroup(self._next_id, lc.spec, w.spec.worker_id, cap,
                    self.batch_multipliers.get(lc.spec.chain_id, 1))
        self._next_id += 1
        register_sgroup(w.sched, sg)
        self.instances[sg.instance] = sg
        lc.idle.append(sg)
        return sg

    def scale_in(self, lc: LogicalChain) -> Optional[SGroup]:
        """Remove the most recently added idle instance."""
        if not lc.idle:
            return None
        sg = lc.idle.pop()
        unregister_sgroup(self.worker_of(sg).sched, sg)
        del self.instances[sg.instance]
        self.monitor.forget(sg.instance)
        return sg

    def rebalance_pool(self, lc: LogicalChain, now: TimeNs) -> None:
        while len(lc.idle) < self.scaling.scale_out_thresh:
            if self.scale_out(lc) is None:
                break
        while len(lc.idle) > self.scaling.scale_in_thresh:
            self.scale_in(lc)
        self.pool_trace.append((now, lc.spec.chain_id, len(lc.idle)))

    def bootstrap(self, now: TimeNs = 0) -> None:
        for lc in self.chains.values():
            self.rebalance_pool(lc, now)

    # -- ingress side ------------------------------------------------------

    def assign_flow(self, lc: LogicalChain, now: TimeNs) -> SGroup:
        """Pick an instance for a new flow (raises NoCapacity), then rebalance the pool."""
        active = [(sg.instance, self.load(sg)) for sg in lc.active]
        idle = [(sg.instance, self.worker_of(sg).load()) for sg in lc.idle]
        try:
            choice: Assignment = handle_new_flow(active, idle, lc.threshold)
        except NoCapacity:
            self.fault("capacity")
            self.rebalance_pool(lc, now)
            raise
        sg = self.instances[choice.instance]
        if choice.activated:
            lc.idle.remove(sg)
            self.set_active(lc, sg)
        self.assignments.append((now, sg.instance, dict(active).get(sg.instance, 0.0), lc.spec.chain_id))
        self.rebalance_pool(lc, now)
        return sg

    def set_active(self, lc: LogicalChain, sg: SGroup) -> None:
        sg.active = True
        if sg not in lc.active:
            lc.active.append(sg)
            lc.active.sort(key=lambda s: s.instance)

    def set_inactive(self, sg: SGroup) -> None:
        lc = self.chains[sg.chain.chain_id]
        sg.active = False
        if sg in lc.active:
            lc.active.remove(sg)

    def return_to_pool(self, sg: SGroup, now: TimeNs) -> None:
        """A detached, inactive instance rejoins the idle pool."""
        lc = self.chains[sg.chain.chain_id]
        if sg.failed or sg.active or sg.is_sched or sg in lc.idle:
            return
        if sg.instance not in self.instances:
            return
        self.monitor.forget(sg.instance)
        lc.idle.append(sg)
        self.rebalance_pool(lc, now)

    def mark_failed(self, sg: SGroup) -> None:
        self.set_inactive(sg)
        lc = self.chains[sg.chain.chain_id]
        if sg in lc.idle:
            lc.idle.remove(sg)
        self.monitor.forget(sg.instance)

    # -- worker side -------------------------------------------------------

    def scheduler_loop_step(self, worker: WorkerRuntime, now: TimeNs = 0) -> list[LoopAction]:
        """One pass of the worker loop: detach idle sgroups, attach newly active ones."""
        actions = []
        sched: CoopScheduler = worker.sched
        for sg in worker.sgroups:
            if sg.failed:
                continue
            if sg.state is SGroupState.ATTACHED and not sg.active:
                st = detach_sgroup(sched, sg)
                actions.append(LoopAction("detach" if st is SGroupState.DETACHED else "drain", sg.instance))
            if sg.active and not sg.is_sched:
                core = sched.pick_idle_core()
                if core is None:
                    self.fault("attach_deferred")
                    actions.append(LoopAction("defer", sg.instance))
                    continue
                attach_sgroup(sched, sg, core)
                actions.append(LoopAction("attach", sg.instance, core.core_id))
        return actions


def expected_instances(offered_pps: float, threshold: float, max_rate: float) -> int:
    return math.ceil(offered_pps / (threshold * max_rate))


def profile_chain(chain: ChainSpec, thresholds: Sequence[int], **kwargs) -> ProfileCurve:
    """Latency profile of one chain on one core, one row per load threshold (percent).

    Thin wrapper over :func:`quaysim.profiling.profile_chain`; see there for options.
    """
    from .profiling import profile_chain as _profile

    return _profile(chain, thresholds, **kwargs)


__all__ = [
    "ChainStats", "Controller", "InfeasibleSLO", "LogicalChain", "LoopAction", "Monitor",
    "NoCapacity", "ProfileCurve", "ProfileRow", "SchedulerError", "WorkerRuntime",
    "chain_load", "expected_instances", "pick_load_threshold", "profile_chain",
]
