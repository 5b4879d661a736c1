from quaysim.nf_state import FlowStateTable, StateStoreModel, periodic_sync, state_read, state_update, sync_times

from conftest import flow


def store(latency=310_000):
    return StateStoreModel(sync_period_ns=1_000_000, latency_ns=latency)


def test_read_your_write():
    t = FlowStateTable()
    state_update(t, flow(1), "v")
    assert state_read(t, flow(1), store()) == ("v", None)
    assert t.fetches == []


def test_last_write_wins_and_dirty_once():
    t = FlowStateTable()
    state_update(t, flow(1), 1)
    state_update(t, flow(1), 2)
    assert state_read(t, flow(1), store())[0] == 2
    assert t.dirty == {flow(1)}


def test_dirty_counts_distinct_flows():
    t = FlowStateTable()
    for i in range(1000):
        state_update(t, flow(i), i)
    assert len(t.dirty) == 1000


def test_miss_schedules_fetch_at_310us():
    t = FlowStateTable()
    val, fetch = state_read(t, flow(7), store(), now=5_000)
    assert val is None
    assert fetch.completes_at - fetch.issued_at == 310_000
    assert fetch.completes_at == 315_000
    assert t.misses == len(t.fetches) == 1


def test_sync_clears_dirty():
    t = FlowStateTable()
    ev = periodic_sync(t, store(), 100)
    assert ev.flushed == 0 and ev.completes_at == 100
    state_update(t, flow(1), 1)
    state_update(t, flow(2), 1)
    ev = periodic_sync(t, store(), 200)
    assert ev.flushed == 2 and t.dirty == set()
    # entries stay readable after the flush
    assert state_read(t, flow(1), store())[1] is None


def test_sync_count_over_run():
    assert len(sync_times(1_000_000, 10_000_000)) == 10
