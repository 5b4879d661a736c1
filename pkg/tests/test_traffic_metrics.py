import statistics

import pytest

from quaysim.core_types import NS_PER_S
from quaysim.metrics import ConservationError, MetricsReport, collect_metrics, core_usage, nearest_rank, percentiles
from quaysim.traffic import Dist, FlowPlan, TrafficModel, concurrent_flows, flow_key, generate_traffic, iter_events, packet_times, Target


def test_zero_rate_yields_nothing():
    assert list(generate_traffic(TrafficModel(flow_rate=0), 10 * NS_PER_S)) == []


def test_fixed_seed_identical_stream():
    m = TrafficModel(flow_rate=20.0, ramp_ns=5 * NS_PER_S, flow_duration_s=Dist("constant", value=1.0))
    a = list(iter_events(m, 3 * NS_PER_S))
    b = list(iter_events(m, 3 * NS_PER_S))
    assert a == b and len(a) > 1000
    times = [t for t, _, _ in a]
    assert times == sorted(times)


def test_peak_concurrency_about_1200():
    # 20 flows/s with 60 s mean duration: ~1200 concurrent flows once warmed up
    counts = []
    for seed in range(1, 6):
        m = TrafficModel(flow_rate=20.0, seed=seed)
        plans = list(generate_traffic(m, 400 * NS_PER_S))
        counts.append(concurrent_flows(plans, 380 * NS_PER_S))
    assert abs(statistics.mean(counts) - 1200) <= 120
    for c in counts:
        assert abs(c - 1200) <= 0.1 * 1200 + 3 * 1200 ** 0.5


def test_ramp_shape():
    m = TrafficModel(flow_rate=10.0, ramp_ns=60 * NS_PER_S, flow_duration_s=Dist("constant", value=1.0))
    starts = [p.start_ns for p in generate_traffic(m, 120 * NS_PER_S)]
    first = sum(1 for s in starts if s < 60 * NS_PER_S)
    second = len(starts) - first
    # half the intensity during the linear ramp
    assert first == pytest.approx(300, rel=0.15)
    assert second == pytest.approx(600, rel=0.15)


def test_deterministic_packet_times():
    plan = FlowPlan(0, flow_key(0, Target()), 1000, 1000 + 10_000_000, 1000.0, 1024)
    ts = list(packet_times(plan))
    assert len(ts) == 10 and ts[0] == 1000 and ts[1] - ts[0] == 1_000_000


def test_nearest_rank():
    assert percentiles([10_000] * 100) == [10_000, 10_000, 10_000]
    vals = list(range(1, 101))
    assert nearest_rank(vals, 0.5) == 50
    assert nearest_rank(vals, 0.99) == 99
    assert nearest_rank([], 0.5) == 0


def test_core_usage():
    avg, peak = core_usage([(0, 1), (50, 2), (75, 0)], 100)
    assert avg == (50 * 1 + 25 * 2) / 100 and peak == 2
    assert core_usage([], 100) == (0.0, 0)


def test_conservation_check():
    counters = dict(injected=10, processed=7, dropped=1, bypass=1)
    rep = collect_metrics({"c": [5] * 7}, counters, {"in_flight": 1}, [], 100)
    assert rep.chains["c"]["p99_ns"] == 5
    with pytest.raises(ConservationError):
        collect_metrics({"c": [5] * 7}, counters, {"in_flight": 0}, [], 100)


def test_report_outputs(tmp_path):
    rep = MetricsReport(injected=1, processed=1)
    assert rep.to_json() == MetricsReport(injected=1, processed=1).to_json()
    rep.to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().startswith("metric,value")
