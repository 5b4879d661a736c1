"""Deterministic discrete-event engine binding traffic, ingress, controller and cores.

Events are ordered by ``(time, sequence)``; the sequence number is the
insertion order, so equal-time events run first-scheduled-first. Given the
same :class:`Scenario` a run is bit-for-bit reproducible.
"""

from __future__ import annotations

import heapq
import logging
import math
import random
from array import array
from dataclasses import dataclass, field, replace
from typing import Optional

from .batch import BatchParams, effective_costs, min_batch
from .controller import ChainStats, Controller, LogicalChain
from .coop_sched import BatchRound, BatchTrace, SGroup, SGroupState, round_finished, timeout_check
from .core_types import (
    NS_PER_MS,
    NS_PER_S,
    ChainSpec,
    ClusterSpec,
    PacketRec,
    TimeNs,
    validate_cluster_spec,
)
from .ingress import FlowRule, FlowTable, NoCapacity, classify, install_rule_complete, route_packet
from .metrics import MetricsReport, collect_metrics
from .nf_state import StateStoreModel, periodic_sync
from .packet_plane import OwnershipLedger, vf_enqueue
from .traffic import FlowPlan, TrafficModel, generate_traffic

log = logging.getLogger(__name__)

# event kinds
FLOW_ARRIVAL = 0
PACKET_ARRIVAL = 1
RULE_INSTALLED = 2
DMA_PULL = 3
BATCH_ROUND = 4
MONITOR_TICK = 5
LOOP_STEP = 6
SYNC_TICK = 7
FLOW_END = 8
TIMEOUT_CHECK = 9
TRAFFIC_STOP = 10
DRAIN_DEADLINE = 11

EVENT_NAMES = {
    FLOW_ARRIVAL: "flow_arrival", PACKET_ARRIVAL: "packet_arrival", RULE_INSTALLED: "rule_installed",
    DMA_PULL: "dma_pull", BATCH_ROUND: "batch_round", MONITOR_TICK: "monitor_tick",
    LOOP_STEP: "loop_step", SYNC_TICK: "sync_tick", FLOW_END: "flow_end",
    TIMEOUT_CHECK: "timeout_check", TRAFFIC_STOP: "traffic_stop", DRAIN_DEADLINE: "drain_deadline",
}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    cluster: ClusterSpec
    traffic: TrafficModel
    # traffic horizon; no new packets after it
    duration_ns: Optional[TimeNs] = None
    packet_budget: Optional[int] = None
    seed: int = 1
    drain_ns: TimeNs = NS_PER_S
    profile_thresholds: tuple = tuple(range(10, 90, 5))
    # None sizes each profiling run by packet count instead
    profile_window_ns: Optional[TimeNs] = None
    keep_ledger_log: bool = False
    keep_traces: bool = True


@dataclass
class ChainPlan:
    """Resolved runtime parameters for one logical chain."""

    threshold: float
    max_rate: float
    batch_multiplier: int = 1


@dataclass
class SimResult:
    report: MetricsReport
    traces: list = field(default_factory=list)
    ledger: Optional[OwnershipLedger] = None
    flow_table: Optional[FlowTable] = None
    controller: Optional[Controller] = None
    core_changes: list = field(default_factory=list)
    event_log: Optional[list] = None
    max_qlen: dict = field(default_factory=dict)


class _Flow:
    __slots__ = ("plan", "k", "rng", "sg", "done", "next_t")

    def __init__(self, plan: FlowPlan, seed: int):
        self.plan = plan
        self.k = 0
        self.rng = random.Random(seed * 7_919 + plan.index) if plan.poisson else None
        self.sg: Optional[SGroup] = None
        self.done = False
        self.next_t = plan.start_ns


class _InstStats:
    __slots__ = ("window_processed", "last_arrival", "live_flows", "pending_installs",
                 "last_busy", "max_qlen")

    def __init__(self):
        self.window_processed = 0
        self.last_arrival = -1
        self.live_flows = 0
        self.pending_installs = 0
        self.last_busy = 0.0
        self.max_qlen = 0


def batch_multiplier_for(chain: ChainSpec, cluster: ClusterSpec, size_bytes: int,
                         freq_hz: int, b_m: int) -> int:
    summary = effective_costs(chain, cluster.costs, size_bytes)
    params = BatchParams(freq_hz=freq_hz, t_ctx_cycles=cluster.costs.t_ctx, b_v=b_m,
                         p=chain.batch_p, b_m=b_m)
    return min_batch(summary, params)


class Simulation:
    """One scenario, one single-threaded event loop.

    ``plans`` maps chain id to its resolved threshold and max rate. With
    ``pinned`` set, a single instance of that chain is attached at time zero,
    every flow is routed to it with no install delay and the controller loops
    are off; this is the closed-loop setup profiling uses.
    """

    def __init__(self, scenario: Scenario, plans: dict[str, ChainPlan],
                 pinned: Optional[str] = None, record_events: bool = False,
                 flow_plans=None):
        self.scenario = scenario
        cl = scenario.cluster
        self.cluster = cl
        self.costs = cl.costs
        self.pinned = pinned
        self.heap: list = []
        self.seq = 0
        self.now = 0
        self.ledger = OwnershipLedger(keep_log=scenario.keep_ledger_log)
        self.table = FlowTable()
        self.controller = Controller(cl.workers, cl.scaling, cl.monitoring)
        self.store = StateStoreModel(cl.state.sync_period_ns, cl.state.remote_latency_ns,
                                     rng=random.Random(scenario.seed))
        self.b_m = {w.worker_id: w.max_batch for w in cl.workers}
        for c in cl.chains:
            p = plans[c.chain_id]
            self.controller.add_chain(c, p.threshold, p.max_rate, p.batch_multiplier)
        self.chains = list(cl.chains)
        self.stats: dict[int, _InstStats] = {}
        self.latencies: dict[str, array] = {c.chain_id: array("q") for c in cl.chains}
        self.traces: list[BatchTrace] = []
        self.keep_traces = scenario.keep_traces
        self.core_changes: list[tuple[int, int]] = []
        self.attached = 0
        self.event_log = [] if record_events else None
        self._last_dep: dict = {}
        self._round_id = 0
        self._stopped = False
        self._traffic_done = False
        self._live_flows = 0
        self._flow_iter = iter(flow_plans) if flow_plans is not None else generate_traffic(
            replace(scenario.traffic, seed=scenario.seed), scenario.duration_ns)
        self._budget = scenario.packet_budget if scenario.packet_budget is not None \
            else scenario.traffic.packet_budget
        self.c = dict(injected=0, processed=0, dropped=0, bypass=0, buffered=0, copies=0, ctx_switches=0,
                      rounds=0, busy_cycles=0.0, vf_drops=0, rejected_drops=0, timeout_drops=0,
                      order_violations=0, remote_fetches=0, sync_events=0)
        self._next_pid = 0

    # -- event plumbing ----------------------------------------------------

    def push(self, t: TimeNs, kind: int, obj=None) -> None:
        heapq.heappush(self.heap, (t, self.seq, kind, obj))
        self.seq += 1

    def _record_cores(self, delta: int) -> None:
        self.attached += delta
        self.core_changes.append((self.now, self.attached))

    # -- run ---------------------------------------------------------------

    def run(self) -> SimResult:
        sc = self.scenario
        ctl = self.controller
        if self.pinned is None:
            ctl.bootstrap(0)
            self.push(ctl.scaling.loop_period_ns, LOOP_STEP)
            self.push(ctl.monitor.config.period_ns, MONITOR_TICK)
            if any(nf.stateful for c in self.chains for nf in c.nfs):
                self.push(self.cluster.state.sync_period_ns, SYNC_TICK)
        else:
            self._pin()
        if sc.duration_ns is not None:
            self.push(sc.duration_ns, TRAFFIC_STOP)
        self._schedule_next_flow()
        handlers = {
            FLOW_ARRIVAL: self._on_flow_arrival, PACKET_ARRIVAL: self._on_packet,
            RULE_INSTALLED: self._on_rule_installed, DMA_PULL: self._on_pull,
            BATCH_ROUND: self._on_round_end, MONITOR_TICK: self._on_monitor,
            LOOP_STEP: self._on_loop, SYNC_TICK: self._on_sync, FLOW_END: self._on_flow_end,
            TIMEOUT_CHECK: self._on_timeout, TRAFFIC_STOP: self._on_traffic_stop,
            DRAIN_DEADLINE: self._on_drain_deadline,
        }
        heap = self.heap
        pop = heapq.heappop
        elog = self.event_log
        self._maybe_finish()
        while heap and not self._stopped:
            t, seq, kind, obj = pop(heap)
            if t < self.now:
                raise RuntimeError("event scheduled in the past")
            self.now = t
            if elog is not None:
                elog.append((t, seq, EVENT_NAMES[kind]))
            handlers[kind](obj)
        return self._finish()

    def _pin(self) -> None:
        ctl = self.controller
        lc = ctl.chains[self.pinned]
        sg = ctl.scale_out(lc)
        lc.idle.remove(sg)
        ctl.set_active(lc, sg)
        w = ctl.worker_of(sg)
        from .coop_sched import attach_sgroup
        attach_sgroup(w.sched, sg, w.sched.pick_idle_core())
        self._record_cores(+1)

    # -- traffic -----------------------------------------------------------

    def _schedule_next_flow(self) -> None:
        if self._traffic_done:
            return
        plan = next(self._flow_iter, None)
        if plan is None:
            self._flows_exhausted = True
            self._check_traffic_done()
            return
        self._flows_exhausted = False
        self.push(plan.start_ns, FLOW_ARRIVAL, plan)

    def _on_flow_arrival(self, plan: FlowPlan) -> None:
        if self._traffic_done:
            return
        f = _Flow(plan, self.scenario.seed)
        self._live_flows += 1
        first = self._next_time(f)
        if first is None:
            self._flow_finished(f)
        else:
            self.push(first, PACKET_ARRIVAL, f)
        self.push(max(plan.end_ns, self.now), FLOW_END, f)
        self._schedule_next_flow()

    def _next_time(self, f: _Flow) -> Optional[TimeNs]:
        plan = f.plan
        if f.rng is not None:
            t = f.next_t + int(f.rng.expovariate(plan.rate_pps) * NS_PER_S)
            f.next_t = t
        else:
            t = plan.start_ns + int(round(f.k * plan.gap_ns))
            f.k += 1
        return t if t < plan.end_ns else None

    def _flow_finished(self, f: _Flow) -> None:
        if not f.done:
            f.done = True
            self._live_flows -= 1
            self._check_traffic_done()

    def _on_packet(self, f: _Flow) -> None:
        if self._traffic_done:
            return
        c = self.c
        now = self.now
        plan = f.plan
        p = PacketRec(self._next_pid, plan.key, plan.size_bytes, now)
        self._next_pid += 1
        c["injected"] += 1
        if self._budget is not None and c["injected"] >= self._budget:
            self._stop_traffic()
        else:
            nt = self._next_time(f)
            if nt is None:
                self._flow_finished(f)
            else:
                self.push(nt, PACKET_ARRIVAL, f)
        self._route(p, f)

    def _route(self, p: PacketRec, f: _Flow) -> None:
        rule = self.table.rules.get(p.flow)
        if rule is not None:
            self._enqueue(self.controller.instances.get(rule.instance) or f.sg, p)
            return
        kind, _ = route_packet(self.table, p)
        if kind == "buffered":
            self.c["buffered"] += 1
            return
        c = self.c
        if kind == "rejected":
            c["dropped"] += 1
            c["rejected_drops"] += 1
            return
        if kind == "bypass":
            c["bypass"] += 1
            return
        self._new_flow(p, f)

    def _new_flow(self, p: PacketRec, f: _Flow) -> None:
        c = self.c
        chain = classify(self.chains, p.flow)
        if chain is None:
            self.table.bypass.add(p.flow)
            c["bypass"] += 1
            return
        ctl = self.controller
        lc = ctl.chains[chain.chain_id]
        if self.pinned is not None:
            sg = lc.active[0]
            self.table.rules[p.flow] = FlowRule(p.flow, sg.worker_id, sg.instance, sg.l2_tag, self.now)
            f.sg = sg
            self._stats(sg).live_flows += 1
            self._enqueue(sg, p)
            return
        try:
            sg = ctl.assign_flow(lc, self.now)
        except NoCapacity:
            self.table.rejected.add(p.flow)
            c["dropped"] += 1
            c["rejected_drops"] += 1
            return
        f.sg = sg
        st = self._stats(sg)
        st.live_flows += 1
        st.pending_installs += 1
        entry = self.table.begin_install(p.flow, sg.worker_id, sg.instance, sg.l2_tag, self.now,
                                         ctl.scaling.install_latency_ns)
        entry.packets.append(p)
        c["buffered"] += 1
        self.push(entry.completes_at, RULE_INSTALLED, p.flow)

    def _on_rule_installed(self, flow) -> None:
        rule, pkts = install_rule_complete(self.table, flow, self.now)
        sg = self.controller.instances.get(rule.instance)
        if sg is None:
            self.c["dropped"] += len(pkts)
            return
        self._stats(sg).pending_installs -= 1
        for p in pkts:
            self._enqueue(sg, p)

    def _on_flow_end(self, f: _Flow) -> None:
        self._flow_finished(f)
        if f.sg is not None:
            self._stats(f.sg).live_flows -= 1

    def _stop_traffic(self) -> None:
        if not self._traffic_done:
            self._traffic_done = True
            self.push(self.now + self.scenario.drain_ns, DRAIN_DEADLINE)
        self._maybe_finish()

    def _on_traffic_stop(self, _=None) -> None:
        self._stop_traffic()

    def _check_traffic_done(self) -> None:
        # with a fixed duration the run always spans it, even if traffic dries up early
        if self.scenario.duration_ns is not None:
            return
        if getattr(self, "_flows_exhausted", False) and self._live_flows == 0:
            self._stop_traffic()

    def _on_drain_deadline(self, _=None) -> None:
        self._stopped = True

    def _in_system(self) -> int:
        c = self.c
        return c["injected"] - c["processed"] - c["dropped"] - c["bypass"]

    def _maybe_finish(self) -> None:
        if self._traffic_done and self._in_system() == 0:
            self._stopped = True

    # -- data plane --------------------------------------------------------

    def _stats(self, sg: SGroup) -> _InstStats:
        st = self.stats.get(sg.instance)
        if st is None:
            st = self.stats[sg.instance] = _InstStats()
        return st

    def _enqueue(self, sg: SGroup, p: PacketRec) -> None:
        c = self.c
        if sg is None or sg.failed:
            c["dropped"] += 1
            c["timeout_drops"] += 1
            return
        if not vf_enqueue(sg.vf, p):
            c["dropped"] += 1
            c["vf_drops"] += 1
            self._maybe_finish()
            return
        st = self._stats(sg)
        st.last_arrival = self.now
        q = len(sg.vf.queue)
        if q > st.max_qlen:
            st.max_qlen = q
        if sg.round is None and sg.state is SGroupState.ATTACHED:
            self._start_round(sg)

    def _start_round(self, sg: SGroup) -> None:
        rnd = BatchRound(self._round_id, sg, self.now, self.costs, self.b_m[sg.worker_id],
                         self.ledger, self.store)
        self._round_id += 1
        nt = rnd.pull()
        if nt is None:
            self._close_pulls(rnd)
        else:
            self.push(nt, DMA_PULL, rnd)

    def _on_pull(self, rnd: BatchRound) -> None:
        if rnd.sg.round is not rnd:
            return
        nt = rnd.pull()
        if nt is None:
            self._close_pulls(rnd)
        else:
            self.push(nt, DMA_PULL, rnd)

    def _close_pulls(self, rnd: BatchRound) -> None:
        timeout = self.controller.scaling.yield_timeout_ns
        if rnd.stuck_at is not None:
            self.push(rnd.stuck_since + timeout, TIMEOUT_CHECK, rnd)
            return
        trace, deps = rnd.finish()
        if trace.terminated:
            rnd.trace = trace
            self.push(rnd.stuck_since + timeout, TIMEOUT_CHECK, rnd)
            return
        rnd.result = (trace, deps)
        self.push(trace.end_ns, BATCH_ROUND, rnd)

    def _on_round_end(self, rnd: BatchRound) -> None:
        sg = rnd.sg
        trace, deps = rnd.result
        c = self.c
        n = len(deps)
        c["processed"] += n
        c["rounds"] += 1
        c["copies"] += trace.copies
        c["ctx_switches"] += trace.ctx_switches
        c["busy_cycles"] += trace.busy_cycles
        c["remote_fetches"] += rnd.remote_fetches
        if self.keep_traces:
            self.traces.append(trace)
        st = self._stats(sg)
        st.window_processed += n
        st.last_busy = trace.busy_cycles
        lat = self.latencies[sg.chain.chain_id]
        app = lat.append
        last_dep = self._last_dep
        viol = 0
        for p, t in deps:
            app(t - p.arrival_ts)
            prev = last_dep.get(p.flow, -1)
            if p.id < prev:
                viol += 1
            last_dep[p.flow] = p.id
        c["order_violations"] += viol
        w = self.controller.worker_of(sg)
        was_draining = sg.state is SGroupState.DRAINING
        round_finished(w.sched, sg)
        if was_draining:
            self._record_cores(-1)
            self.controller.return_to_pool(sg, self.now)
        elif sg.state is SGroupState.ATTACHED and sg.vf.queue:
            self._start_round(sg)
        self._maybe_finish()

    def _on_timeout(self, rnd: BatchRound) -> None:
        sg = rnd.sg
        if sg.round is not rnd:
            return
        w = self.controller.worker_of(sg)
        was_attached = sg.core is not None
        ok = timeout_check(w.sched, sg, self.now - rnd.stuck_since,
                           self.controller.scaling.yield_timeout_ns)
        if ok:
            return
        c = self.c
        lost = len(rnd.packets) + len(sg.vf.queue)
        self.ledger.release(rnd.packets)
        sg.vf.queue.clear()
        c["dropped"] += lost
        c["timeout_drops"] += lost
        self.controller.fault("yield_timeout")
        self.controller.mark_failed(sg)
        if was_attached:
            self._record_cores(-1)
        trace = getattr(rnd, "trace", None)
        if trace is not None and self.keep_traces:
            self.traces.append(trace)
        self._maybe_finish()

    # -- control plane -----------------------------------------------------

    def _on_monitor(self, _=None) -> None:
        ctl = self.controller
        period = ctl.monitor.config.period_ns
        idle_window = ctl.scaling.idle_window_ns
        now = self.now
        for inst in sorted(ctl.instances):
            sg = ctl.instances[inst]
            if sg.failed:
                continue
            st = self._stats(sg)
            if sg.active or sg.is_sched:
                rate = st.window_processed * NS_PER_S / period
                ctl.monitor.on_stats_update(
                    ChainStats(inst, rate, len(sg.vf.queue), st.last_busy, now))
            st.window_processed = 0
            if (sg.active and st.live_flows == 0 and st.pending_installs == 0
                    and not sg.vf.queue and sg.round is None
                    and now - max(st.last_arrival, 0) >= idle_window):
                ctl.set_inactive(sg)
                if not sg.is_sched:
                    ctl.return_to_pool(sg, now)
        self.push(now + period, MONITOR_TICK)

    def _on_loop(self, _=None) -> None:
        ctl = self.controller
        for w in ctl.workers:
            for act in ctl.scheduler_loop_step(w, self.now):
                sg = ctl.instances[act.instance]
                if act.kind == "attach":
                    self._record_cores(+1)
                    if sg.vf.queue and sg.round is None:
                        self._start_round(sg)
                elif act.kind == "detach":
                    self._record_cores(-1)
                    ctl.return_to_pool(sg, self.now)
        self.push(self.now + ctl.scaling.loop_period_ns, LOOP_STEP)

    def _on_sync(self, _=None) -> None:
        for inst in sorted(self.controller.instances):
            sg = self.controller.instances[inst]
            for table in sg.state_tables:
                if table is not None:
                    periodic_sync(table, self.store, self.now)
                    self.c["sync_events"] += 1
        self.push(self.now + self.cluster.state.sync_period_ns, SYNC_TICK)

    # -- wrap-up -----------------------------------------------------------

    def _finish(self) -> SimResult:
        end = self.now
        in_flight = self._in_system()
        counted = sum(len(sg.vf.queue) for sg in self.controller.instances.values())
        counted += sum(len(e.packets) for e in self.table.pending.values())
        counted += sum(len(sg.round.packets) for sg in self.controller.instances.values()
                       if sg.round is not None)
        if counted != in_flight:
            from .metrics import ConservationError
            raise ConservationError(f"in-flight packets: counted {counted}, expected {in_flight}")
        counters = dict(self.c)
        counters.pop("busy_cycles")
        summary = {
            "busy_cycles": self.c["busy_cycles"],
            "in_flight": in_flight,
            "monitor_accepted": self.controller.monitor.accepted,
            "monitor_suppressed": self.controller.monitor.suppressed,
            "spatial_violations": self.ledger.count("spatial"),
            "temporal_violations": self.ledger.count("temporal"),
            "faults": dict(sorted(self.controller.faults.items())),
            "max_qlen": max((s.max_qlen for s in self.stats.values()), default=0),
        }
        report = collect_metrics(self.latencies, counters, summary, self.core_changes, end)
        for cid, cm in report.chains.items():
            cm["instances_used"] = len({a[1] for a in self.controller.assignments if a[3] == cid})
        return SimResult(report, self.traces, self.ledger, self.table, self.controller,
                         self.core_changes, self.event_log,
                         {k: v.max_qlen for k, v in sorted(self.stats.items())})


def plan_chains(scenario: Scenario, curves: Optional[dict] = None) -> dict[str, ChainPlan]:
    """Resolve each chain's threshold, max rate and batch multiplier.

    Chains without a configured threshold are profiled and get the highest
    threshold meeting their SLO. ``curves`` may pass precomputed profiles.
    """
    from .profiling import measure_max_rate, profile_chain
    from .controller import pick_load_threshold

    cl = scenario.cluster
    w = cl.workers[0]
    size = int(scenario.traffic.packet_size.center())
    plans = {}
    for chain in cl.chains:
        bm = batch_multiplier_for(chain, cl, size, w.freq_hz, w.max_batch)
        curve = (curves or {}).get(chain.chain_id)
        if chain.load_threshold is not None and curve is None:
            max_rate = measure_max_rate(chain, cl, size)
            threshold = chain.load_threshold
        else:
            if curve is None:
                curve = profile_chain(chain, scenario.profile_thresholds, cluster=cl,
                                      size_bytes=size, window_ns=scenario.profile_window_ns,
                                      seed=scenario.seed)
            max_rate = curve.max_rate
            threshold = (chain.load_threshold if chain.load_threshold is not None
                         else pick_load_threshold(curve, chain.slo_p99_ns) / 100)
        plans[chain.chain_id] = ChainPlan(threshold, max_rate, bm)
    return plans


def run_scenario(scenario: Scenario, plans: Optional[dict] = None, **kwargs) -> SimResult:
    """Validate, resolve chain plans if needed, and run one scenario."""
    validate_cluster_spec(scenario.cluster)
    if scenario.packet_budget is not None and scenario.packet_budget < 0:
        raise ScenarioError("packet_budget must be non-negative")
    if plans is None:
        plans = plan_chains(scenario)
    return Simulation(scenario, plans, **kwargs).run()
