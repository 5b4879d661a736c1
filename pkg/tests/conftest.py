import pytest

from quaysim.core_types import ChainSpec, ClusterSpec, FlowKey, NfProfile, PacketRec, WorkerSpec


def nfs(*cycles, **kw):
    return tuple(NfProfile(f"nf{i}", c, **kw) for i, c in enumerate(cycles))


def chain(cid="c", *cycles, **kw):
    return ChainSpec(cid, nfs(*(cycles or (500,))), **kw)


def flow(i=0, dst="192.168.0.1", dport=80, proto=17):
    return FlowKey(f"10.0.0.{i % 250}", dst, 1000 + i, dport, proto)


def packets(n, size=100, start_id=0, f=None, t=0):
    f = f or flow()
    return [PacketRec(start_id + i, f, size, t) for i in range(n)]


@pytest.fixture
def small_cluster():
    c = chain("c", 20000, 28000)
    return ClusterSpec((WorkerSpec("w0", 4),), (c,))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
