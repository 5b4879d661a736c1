import itertools

import pytest
from hypothesis import given, strategies as st

from quaysim.core_types import PacketRec
from quaysim.ingress import (
    FlowTable,
    NoCapacity,
    handle_new_flow,
    install_rule_complete,
    pick_highest_load_without_overload,
    route_packet,
)

from conftest import flow, packets


def brute_pick(loads, threshold):
    ok = [(inst, l) for inst, l in loads if l <= threshold]
    if not ok:
        return None
    top = max(l for _, l in ok)
    return min(inst for inst, l in ok if l == top)


def test_pick_highest_non_overloaded():
    loads = [(0, 0.5), (1, 0.7), (2, 0.9)]
    assert pick_highest_load_without_overload(loads, 0.8) == 1 == brute_pick(loads, 0.8)


def test_idle_from_least_loaded_worker():
    a = handle_new_flow([(0, 0.9), (1, 0.95)], [(5, 0.6), (6, 0.2)], 0.8)
    assert a.instance == 6 and a.activated


def test_no_capacity():
    with pytest.raises(NoCapacity):
        handle_new_flow([(0, 0.99)], [], 0.8)
    with pytest.raises(NoCapacity):
        handle_new_flow([], [], 0.8)


@given(st.lists(st.floats(0, 1.5), max_size=8), st.floats(0.05, 1.0))
def test_pick_matches_enumeration(loads, threshold):
    pairs = list(enumerate(loads))
    assert pick_highest_load_without_overload(pairs, threshold) == brute_pick(pairs, threshold)


def test_buffering_preserves_order_and_releases_all():
    t = FlowTable()
    f = flow(3)
    pk = packets(3, f=f)
    assert route_packet(t, pk[0])[0] == "new"
    entry = t.begin_install(f, "w0", 4, 4, 0, 5_000_000)
    entry.packets.append(pk[0])
    for p in pk[1:]:
        assert route_packet(t, p)[0] == "buffered"
    rule, released = install_rule_complete(t, f, 5_000_000)
    assert [p.id for p in released] == [0, 1, 2]
    assert rule.installed_at == 5_000_000 and f not in t.pending
    late = PacketRec(9, f, 100, 5_000_001)
    assert route_packet(t, late) == ("vf", rule)


def test_empty_install():
    t = FlowTable()
    t.begin_install(flow(1), "w0", 0, 0, 0, 10)
    rule, released = install_rule_complete(t, flow(1), 10)
    assert released == [] and flow(1) in t.rules


def test_replay_conservation_oracle():
    # 10,000 packets over 100 flows: rule installs complete after 5 packets per flow,
    # some flows are rejected and some bypass
    t = FlowTable()
    outcome = {"vf": 0, "buffered": 0, "rejected": 0, "bypass": 0}
    released = 0
    seen = {}
    pid = itertools.count()
    for k in range(100):
        for i in range(100):
            f = flow(i, dport=80 + i % 4)
            p = PacketRec(next(pid), f, 100, k)
            kind, _ = route_packet(t, p)
            if kind == "new":
                if i % 10 == 0:
                    t.rejected.add(f)
                    kind = "rejected"
                elif i % 10 == 1:
                    t.bypass.add(f)
                    kind = "bypass"
                else:
                    t.begin_install(f, "w0", i, i, k, 5).packets.append(p)
                    kind = "buffered"
            outcome[kind] += 1
            seen[f] = seen.get(f, 0) + 1
            if kind == "buffered" and seen[f] == 5:
                released += len(install_rule_complete(t, f, k)[1])
    assert sum(outcome.values()) == 10_000
    assert released == outcome["buffered"]
    assert outcome["rejected"] == outcome["bypass"] == 1000
