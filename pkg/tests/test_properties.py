from hypothesis import HealthCheck, given, settings, strategies as st

from quaysim.core_types import NS_PER_MS, ChainSpec, ClusterSpec, CostConstants, NfProfile, WorkerSpec
from quaysim.coop_sched import CoopScheduler, SGroup, attach_sgroup, execute_batch_round, register_sgroup
from quaysim.engine import ChainPlan, Scenario, Simulation
from quaysim.packet_plane import OwnershipLedger, copy_cost, vf_enqueue, NicVfQueue
from quaysim.traffic import Dist, TrafficModel

from conftest import packets

scenario_params = st.fixed_dictionaries({
    "costs": st.lists(st.integers(500, 30_000), min_size=1, max_size=4),
    "cores": st.integers(1, 4),
    "vf": st.integers(2, 64),
    "flow_rate": st.floats(1.0, 40.0),
    "pps": st.floats(100.0, 5_000.0),
    "threshold": st.floats(0.05, 1.0),
    "seed": st.integers(1, 1000),
})


def build(p):
    chain = ChainSpec("c", tuple(NfProfile(f"n{i}", c) for i, c in enumerate(p["costs"])))
    cl = ClusterSpec((WorkerSpec("w0", p["cores"], vf_queue_capacity=p["vf"]),), (chain,))
    traffic = TrafficModel(flow_rate=p["flow_rate"], ramp_ns=0, flow_duration_s=Dist("exponential", mean=0.2),
                           packet_rate=Dist("constant", value=p["pps"]))
    return Scenario(cl, traffic, packet_budget=1500, seed=p["seed"], drain_ns=20 * NS_PER_MS), \
        {"c": ChainPlan(p["threshold"], 20_000.0, 1)}


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(scenario_params)
def test_conservation_and_isolation_hold(p):
    sc, plans = build(p)
    res = Simulation(sc, plans).run()
    rep = res.report
    assert rep.injected == rep.processed + rep.dropped + rep.in_flight + rep.bypass
    assert rep.spatial_violations == rep.temporal_violations == rep.order_violations == 0
    n = len(p["costs"])
    assert rep.copies == (rep.processed if n >= 2 else 0)
    assert rep.ctx_switches == (n * rep.rounds if n >= 2 else 0)


@settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(scenario_params)
def test_determinism(p):
    sc, plans = build(p)
    a = Simulation(sc, plans).run()
    b = Simulation(sc, plans).run()
    assert a.report.to_json() == b.report.to_json()
    assert a.traces == b.traces


@given(st.lists(st.integers(100, 20_000), min_size=1, max_size=6), st.integers(1, 100),
       st.sampled_from([64, 100, 512, 1024, 1500]))
def test_busy_cycles_identity(costs, k, size):
    cc = CostConstants()
    chain = ChainSpec("c", tuple(NfProfile(f"n{i}", c) for i, c in enumerate(costs)))
    s = CoopScheduler("w0", 1)
    sg = SGroup(0, chain, batch_multiplier=4)
    register_sgroup(s, sg)
    attach_sgroup(s, sg, s.cores[0])
    for p in packets(k, size):
        vf_enqueue(sg.vf, p)
    led = OwnershipLedger()
    trace, deps = execute_batch_round(s, sg, 0, cc, 32, led)
    n, m = len(costs), trace.packets
    copies = m * copy_cost(size, cc) if n >= 2 else 0
    ctx = n * cc.t_ctx if n >= 2 else 0
    expect = copies + m * (sum(costs) + cc.warmup) + ctx + cc.per_hop_overhead * m * (n - 1)
    assert abs(trace.busy_cycles - expect) < 1e-6
    assert m == min(k, 128)
    assert led.violations == []
    times = [t for _, t in deps]
    assert times == sorted(times)


@given(st.integers(1, 300), st.integers(1, 200))
def test_vf_enqueue_conserves(offered, cap):
    q = NicVfQueue(0, cap)
    for p in packets(offered):
        vf_enqueue(q, p)
    assert q.accepted + q.drops == offered
    assert q.drops == max(0, offered - cap)
