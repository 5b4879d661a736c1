"""Single-core chain profiling: saturated throughput and the load/latency curve.

Each profile row offers ``threshold * max_rate`` packets/s to one pinned
instance, split over a fixed set of Poisson flows. The flows reuse the same
random draws at every threshold, so rows differ only by a time scaling of one
arrival pattern; this keeps the curve's trend free of seed noise.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional, Sequence

from .batch import effective_costs, estimated_rate
from .batch import BatchParams
from .controller import ProfileCurve, ProfileRow
from .core_types import NS_PER_S, ChainSpec, ClusterSpec, TrafficFilter, WorkerSpec
from .traffic import FlowPlan, Target, TrafficModel, flow_key

DEFAULT_PROFILE_PACKETS = 20_000


def _pinned_cluster(chain: ChainSpec, cluster: Optional[ClusterSpec]) -> tuple[ChainSpec, ClusterSpec]:
    base = cluster if cluster is not None else ClusterSpec((WorkerSpec("w0", 1),), (chain,))
    w = base.workers[0]
    solo = replace(chain, traffic_filter=TrafficFilter())
    return solo, replace(base, workers=(replace(w, num_cores=1, max_sgroups=1),), chains=(solo,))


def _run_pinned(chain: ChainSpec, cluster: ClusterSpec, plans: list[FlowPlan], seed: int,
                keep_traces: bool = False, batch_multiplier: Optional[int] = None):
    from .engine import ChainPlan, Scenario, Simulation, batch_multiplier_for

    w = cluster.workers[0]
    size = plans[0].size_bytes if plans else 1024
    bm = batch_multiplier if batch_multiplier is not None else batch_multiplier_for(
        chain, cluster, size, w.freq_hz, w.max_batch)
    sc = Scenario(cluster, TrafficModel(flow_rate=0), seed=seed, keep_traces=keep_traces)
    plan = {chain.chain_id: ChainPlan(1.0, 1.0, bm)}
    return Simulation(sc, plan, pinned=chain.chain_id, flow_plans=plans).run()


def saturating_flows(rate_pps: float, duration_ns: int, size_bytes: int, n_flows: int = 64) -> list[FlowPlan]:
    """``n_flows`` evenly spaced flows all starting at zero, ``rate_pps`` in aggregate."""
    per = rate_pps / n_flows
    return [FlowPlan(i, flow_key(i, Target()), 0, duration_ns, per, size_bytes)
            for i in range(n_flows)]


def trace_throughput(traces, skip: int = 1) -> float:
    """Packets per second over back-to-back rounds, ignoring the first ``skip``."""
    rounds = traces[skip:]
    if not rounds:
        return 0.0
    span = rounds[-1].end_ns - rounds[0].start_ns
    return sum(t.packets for t in rounds) * NS_PER_S / span if span > 0 else 0.0


def measure_max_rate(chain: ChainSpec, cluster: Optional[ClusterSpec] = None, size_bytes: int = 1024,
                     packets: int = DEFAULT_PROFILE_PACKETS, batch_multiplier: Optional[int] = None,
                     seed: int = 1) -> float:
    """Saturated single-core packet rate of ``chain`` measured from round traces."""
    solo, cl = _pinned_cluster(chain, cluster)
    w = cl.workers[0]
    summary = effective_costs(solo, cl.costs, size_bytes)
    params = BatchParams(w.freq_hz, cl.costs.t_ctx, w.max_batch, solo.batch_p, w.max_batch)
    guess = estimated_rate(summary, params, batch_multiplier or 1)
    offered = 2.0 * guess
    duration = int(packets / guess * NS_PER_S)
    res = _run_pinned(solo, cl, saturating_flows(offered, duration, size_bytes), seed,
                      keep_traces=True, batch_multiplier=batch_multiplier)
    return trace_throughput(res.traces)


def profile_flows(offered_pps: float, duration_ns: int, size_bytes: int,
                  n_flows: int = 100) -> list[FlowPlan]:
    per = offered_pps / n_flows
    return [FlowPlan(i, flow_key(i, Target()), 0, duration_ns, per, size_bytes, poisson=True)
            for i in range(n_flows)]


def profile_chain(chain: ChainSpec, thresholds: Sequence[int], cluster: Optional[ClusterSpec] = None,
                  size_bytes: int = 1024, window_ns: Optional[int] = None,
                  packets_per_row: int = DEFAULT_PROFILE_PACKETS, seed: int = 1,
                  n_flows: int = 100, max_rate: Optional[float] = None) -> ProfileCurve:
    """One row per threshold (percent of the saturated rate): p99, max queue, achieved rate."""
    solo, cl = _pinned_cluster(chain, cluster)
    if max_rate is None:
        max_rate = measure_max_rate(solo, cl, size_bytes, seed=seed)
    rows = []
    for pct in sorted(thresholds):
        offered = max_rate * pct / 100
        duration = window_ns if window_ns is not None else int(packets_per_row / offered * NS_PER_S)
        res = _run_pinned(solo, cl, profile_flows(offered, duration, size_bytes, n_flows), seed)
        rep = res.report
        cm = rep.chains[solo.chain_id]
        rate = rep.processed * NS_PER_S / duration
        rows.append(ProfileRow(int(pct), int(cm["p99_ns"]), int(rep.max_qlen), rate))
    return ProfileCurve(rows, max_rate)
