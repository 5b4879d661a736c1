import warnings

import pytest

from quaysim.controller import (
    ChainStats,
    Controller,
    InfeasibleSLO,
    Monitor,
    ProfileCurve,
    ProfileRow,
    chain_load,
    expected_instances,
    pick_load_threshold,
)
from quaysim.core_types import MonitoringConfig, ScalingConfig, WorkerSpec
from quaysim.ingress import NoCapacity

from conftest import chain


def test_chain_load():
    assert chain_load(ChainStats(0, 450_000, 0), 900_000) == 0.5
    assert chain_load(ChainStats(0, 0, 0), 900_000) == 0.0
    assert chain_load(ChainStats(0, 900_000, 0), 900_000) == 1.0
    with pytest.raises(ValueError):
        chain_load(ChainStats(0, 1, 0), 0)


def test_monitor_gating():
    m = Monitor(MonitoringConfig(epsilon=0.05, queue_mark=64))
    assert m.on_stats_update(ChainStats(0, 1000.0, 0))
    assert not m.on_stats_update(ChainStats(0, 1001.0, 0))
    assert m.on_stats_update(ChainStats(0, 1001.0, 70))
    assert m.suppressed == 1 and m.accepted == 2


def test_monitor_constant_traffic():
    m = Monitor()
    accepted = sum(m.on_stats_update(ChainStats(0, 5000.0, 3, last_report=i)) for i in range(10))
    assert accepted <= 1


def curve(*pairs):
    return ProfileCurve([ProfileRow(t, p, 0, 0.0) for t, p in pairs])


def scan_oracle(c, slo):
    ok = [r.threshold_pct for r in c.rows if r.p99_ns <= slo]
    return max(ok) if ok else None


def test_pick_load_threshold():
    c = curve((25, 40_000), (50, 70_000), (80, 150_000))
    assert pick_load_threshold(c, 100_000) == 50 == scan_oracle(c, 100_000)
    assert pick_load_threshold(c, 10**9) == 80
    with pytest.warns(InfeasibleSLO):
        assert pick_load_threshold(c, 1_000) == 25


def test_curve_csv_roundtrip(tmp_path):
    c = curve((10, 5), (20, 7))
    c.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "threshold_pct,p99_ns,max_qlen,rate_pps"
    assert ProfileCurve.from_csv(tmp_path / "c.csv").rows == c.rows


def ctl(cores=2, out=1, into=2, workers=1):
    c = Controller([WorkerSpec(f"w{i}", cores) for i in range(workers)],
                   ScalingConfig(scale_out_thresh=out, scale_in_thresh=into))
    lc = c.add_chain(chain("c", 100), 0.5, 1000.0)
    return c, lc


def test_scale_out_and_in():
    c, lc = ctl(cores=8, out=2, into=3)
    c.rebalance_pool(lc, 0)
    assert len(lc.idle) == 2
    for _ in range(3):
        c.scale_out(lc)
    assert len(lc.idle) == 5
    c.rebalance_pool(lc, 1)
    assert len(lc.idle) == 3


def test_assign_fills_then_activates():
    c, lc = ctl(cores=4)
    c.bootstrap()
    a = c.assign_flow(lc, 0)
    assert a.active and len(lc.active) == 1 and len(lc.idle) == 1
    # below threshold: reuse
    c.monitor.on_stats_update(ChainStats(a.instance, 400.0, 0))
    assert c.assign_flow(lc, 1) is a
    # above threshold: a second instance is woken
    c.monitor.on_stats_update(ChainStats(a.instance, 600.0, 0))
    b = c.assign_flow(lc, 2)
    assert b is not a and len(lc.active) == 2
    for t, inst, load, cid in c.assignments:
        assert load <= lc.threshold
    for _, _, size in c.pool_trace:
        assert 1 <= size <= 2


def test_no_capacity_fault():
    c, lc = ctl(cores=1)  # sgroup capacity 2
    c.bootstrap()
    first = c.assign_flow(lc, 0)
    c.monitor.on_stats_update(ChainStats(first.instance, 900.0, 0))
    second = c.assign_flow(lc, 1)
    c.monitor.on_stats_update(ChainStats(second.instance, 900.0, 0))
    with pytest.raises(NoCapacity):
        c.assign_flow(lc, 2)
    assert c.faults["capacity"] == 1


def test_loop_attach_detach_and_defer():
    c, lc = ctl(cores=1, out=2, into=3)
    c.bootstrap()
    w = c.workers[0]
    a = c.assign_flow(lc, 0)
    c.monitor.on_stats_update(ChainStats(a.instance, 900.0, 0))
    b = c.assign_flow(lc, 0)
    acts = c.scheduler_loop_step(w)
    assert [x.kind for x in acts] == ["attach", "defer"]
    assert c.faults["attach_deferred"] == 1
    # idempotent when nothing changed (apart from the repeated deferral)
    assert [x.kind for x in c.scheduler_loop_step(w)] == ["defer"]
    c.set_inactive(a)
    acts = c.scheduler_loop_step(w)
    assert [x.kind for x in acts] == ["detach", "attach"]
    assert w.sched.cores[0].attached is b


def test_detached_sgroups_cost_nothing():
    from quaysim.engine import Scenario, Simulation, ChainPlan
    from quaysim.core_types import ClusterSpec
    from quaysim.traffic import TrafficModel
    cl = ClusterSpec((WorkerSpec("w0", 8),), (chain("c", 100),),
                     scaling=ScalingConfig(scale_out_thresh=5, scale_in_thresh=5))
    sc = Scenario(cl, TrafficModel(flow_rate=0), duration_ns=1_000_000_000)
    sim = Simulation(sc, {"c": ChainPlan(0.5, 1000.0)})
    res = sim.run()
    assert len(sim.controller.chains["c"].idle) == 5
    assert res.report.duration_ns == 1_000_000_000
    assert res.report.busy_cycles == 0 and res.report.avg_cores == 0


def test_expected_instances():
    assert expected_instances(30_000, 0.1, 49_000) == 7
