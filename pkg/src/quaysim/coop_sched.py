"""Per-core cooperative scheduling of NF chains.

Each deployed chain instance is an sgroup: its NF tasks sit in the worker's
wait queue while detached and move, in chain order, onto one core's run queue
when attached. An attached sgroup runs batch rounds: the first NF pulls up to
``B_v`` NIC batches and (for N >= 2) copies them into the chain buffer, then
every NF in turn processes the whole round and yields to the next. A round of
an N-NF chain costs N context switches (the last one hands the core back to
the first NF); a single-NF chain runs without copies or switches.
"""

from __future__ import annotations

import csv
import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core_types import (
    NS_PER_S,
    ChainSpec,
    CostConstants,
    NfProfile,
    PacketRec,
    TimeNs,
    chain_buffer,
    cycles_to_ns,
)
from .nf_state import FlowStateTable, StateStoreModel
from .packet_plane import NicVfQueue, OwnershipLedger, copy_cost, dma_batch


class SchedulerError(RuntimeError):
    pass


class SGroupState(enum.Enum):
    DETACHED = "detached"
    ATTACHED = "attached"
    DRAINING = "draining"


@dataclass(frozen=True)
class NfTask:
    instance: int
    index: int
    profile: NfProfile


class SGroup:
    """One deployed chain instance and its scheduling state."""

    def __init__(self, instance: int, chain: ChainSpec, worker_id: str = "w0",
                 vf_capacity: int = 128, batch_multiplier: int = 1, l2_tag: Optional[int] = None):
        self.instance = instance
        self.chain = chain
        self.worker_id = worker_id
        self.tasks = tuple(NfTask(instance, i, nf) for i, nf in enumerate(chain.nfs))
        self.state = SGroupState.DETACHED
        self.core: Optional["CoreScheduler"] = None
        self.batch_multiplier = batch_multiplier
        self.active = False
        self.failed = False
        self.registered = False
        self.l2_tag = instance if l2_tag is None else l2_tag
        self.vf = NicVfQueue(instance, vf_capacity)
        self.state_tables = [FlowStateTable() if nf.stateful else None for nf in chain.nfs]
        self.round: Optional[BatchRound] = None
        # per-NF size -> cycles cache
        self._cost_cache: list[dict[int, int]] = [dict() for _ in chain.nfs]

    @property
    def n(self) -> int:
        return len(self.tasks)

    @property
    def is_sched(self) -> bool:
        return self.state is not SGroupState.DETACHED

    @property
    def in_round(self) -> bool:
        return self.round is not None

    def service_cycles(self, index: int, size: int) -> int:
        cache = self._cost_cache[index]
        c = cache.get(size)
        if c is None:
            c = cache[size] = self.tasks[index].profile.service_cost(size)
        return c

    def __repr__(self) -> str:
        return f"SGroup({self.instance}, {self.chain.chain_id}, {self.state.value})"


@dataclass
class CoreScheduler:
    core_id: str
    freq_hz: int = 2_400_000_000
    run_queue: deque = field(default_factory=deque)
    attached: Optional[SGroup] = None

    @property
    def idle(self) -> bool:
        return self.attached is None


class CoopScheduler:
    """A worker's cooperative scheduler: one wait queue, one run queue per core."""

    def __init__(self, worker_id: str, num_cores: int, freq_hz: int = 2_400_000_000):
        self.worker_id = worker_id
        self.freq_hz = freq_hz
        self.cores = [CoreScheduler(f"{worker_id}/c{i}", freq_hz) for i in range(num_cores)]
        self.wait_queue: deque[NfTask] = deque()
        self.sgroups: dict[int, SGroup] = {}

    def idle_cores(self) -> list[CoreScheduler]:
        return [c for c in self.cores if c.attached is None]

    def pick_idle_core(self) -> Optional[CoreScheduler]:
        for c in self.cores:
            if c.attached is None:
                return c
        return None

    def attached_count(self) -> int:
        return sum(1 for c in self.cores if c.attached is not None)


def register_sgroup(sched: CoopScheduler, sg: SGroup) -> SGroup:
    if sg.registered or sg.instance in sched.sgroups:
        raise SchedulerError(f"sgroup {sg.instance} already registered")
    if sg.state is not SGroupState.DETACHED:
        raise SchedulerError("only detached sgroups can be registered")
    sched.sgroups[sg.instance] = sg
    sched.wait_queue.extend(sg.tasks)
    sg.registered = True
    return sg


def unregister_sgroup(sched: CoopScheduler, sg: SGroup) -> None:
    if sg.state is not SGroupState.DETACHED:
        raise SchedulerError("cannot unregister a scheduled sgroup")
    if sched.sgroups.pop(sg.instance, None) is None:
        raise SchedulerError(f"sgroup {sg.instance} not registered")
    sched.wait_queue = deque(t for t in sched.wait_queue if t.instance != sg.instance)
    sg.registered = False


def attach_sgroup(sched: CoopScheduler, sg: SGroup, core: CoreScheduler) -> SGroup:
    if sched.sgroups.get(sg.instance) is not sg:
        raise SchedulerError(f"sgroup {sg.instance} is not registered")
    if sg.state is not SGroupState.DETACHED:
        raise SchedulerError(f"sgroup {sg.instance} is {sg.state.value}")
    if core.attached is not None:
        raise SchedulerError(f"core {core.core_id} is busy")
    sched.wait_queue = deque(t for t in sched.wait_queue if t.instance != sg.instance)
    core.run_queue.extend(sg.tasks)
    core.attached = sg
    sg.core = core
    sg.state = SGroupState.ATTACHED
    return sg


def detach_sgroup(sched: CoopScheduler, sg: SGroup) -> SGroupState:
    """Detach now if idle; mid-round the sgroup drains and detaches at round end."""
    if sg.state is SGroupState.DETACHED:
        raise SchedulerError(f"sgroup {sg.instance} is already detached")
    if sg.in_round:
        sg.state = SGroupState.DRAINING
        return sg.state
    _release_core(sched, sg)
    return sg.state


def _release_core(sched: CoopScheduler, sg: SGroup) -> None:
    core = sg.core
    core.run_queue.clear()
    core.attached = None
    sg.core = None
    sg.state = SGroupState.DETACHED
    sched.wait_queue.extend(sg.tasks)


def round_finished(sched: CoopScheduler, sg: SGroup) -> None:
    """Called when a round closes; completes a pending detach."""
    sg.round = None
    if sg.state is SGroupState.DRAINING:
        _release_core(sched, sg)


def timeout_check(sched: CoopScheduler, sg: SGroup, elapsed_ns: TimeNs,
                  yield_timeout_ns: TimeNs) -> bool:
    """Return True while ``elapsed_ns`` is below the yield timeout.

    Once it reaches the timeout the sgroup is forcibly detached and marked failed; the caller
    accounts its in-flight packets as dropped.
    """
    if elapsed_ns < yield_timeout_ns:
        return True
    sg.round = None
    if sg.state is not SGroupState.DETACHED:
        _release_core(sched, sg)
    sg.failed = True
    sg.active = False
    return False


@dataclass
class BatchTrace:
    round_id: int
    instance: int
    chain_id: str
    core_id: str
    start_ns: TimeNs
    end_ns: TimeNs
    packets: int
    copies: int
    ctx_switches: int
    busy_cycles: float
    nf_cycles: tuple = ()
    copy_cycles: int = 0
    ctx_cycles: int = 0
    hop_cycles: float = 0.0
    dma_batches: int = 0
    stall_ns: TimeNs = 0
    terminated: bool = False


TRACE_HEADER = ["round_id", "chain_id", "core_id", "start_ns", "end_ns", "packets",
                "copies", "ctx_switches", "busy_cycles"]


def write_trace_csv(traces, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for t in traces:
            w.writerow([t.round_id, t.chain_id, t.core_id, t.start_ns, t.end_ns, t.packets,
                        t.copies, t.ctx_switches, repr(float(t.busy_cycles))])


class BatchRound:
    """One run-to-completion round of an attached sgroup.

    The first NF works batch by batch so that later pulls see packets that
    arrived meanwhile: call :meth:`pull` at ``start`` and again at every time
    it returns, until it returns ``None``; then :meth:`finish` runs the
    downstream NFs and yields departures.
    """

    def __init__(self, round_id: int, sg: SGroup, start_ns: TimeNs, costs: CostConstants,
                 b_m: int, ledger: Optional[OwnershipLedger] = None,
                 store: Optional[StateStoreModel] = None):
        if sg.core is None:
            raise SchedulerError(f"sgroup {sg.instance} is not attached")
        self.id = round_id
        self.sg = sg
        self.start_ns = start_ns
        self.costs = costs
        self.b_m = b_m
        self.ledger = ledger
        self.store = store
        self.freq = sg.core.freq_hz
        self.packets: list[PacketRec] = []
        self.cycles = 0.0
        self.stall_ns = 0
        self.nf_cycles = [0] * sg.n
        self.copy_cycles = 0
        self.dma_batches = 0
        self.remote_fetches = 0
        self.done_pulling = False
        self.stuck_at: Optional[int] = None
        self.stuck_since: Optional[TimeNs] = None
        sg.round = self

    def now(self) -> TimeNs:
        # cycles is a float, so this is cycles_to_ns's float branch inlined
        return self.start_ns + int(round(self.cycles * NS_PER_S / self.freq)) + self.stall_ns

    def pull(self) -> Optional[TimeNs]:
        """Take one NIC batch into the first NF; return when to pull again, or None."""
        sg = self.sg
        now = self.now()
        if self.stuck_at is not None or self.dma_batches >= sg.batch_multiplier:
            self.done_pulling = True
            return None
        batch = dma_batch(sg.vf, self.b_m, self.ledger, now)
        if not batch:
            self.done_pulling = True
            return None
        self.dma_batches += 1
        first = sg.tasks[0].profile
        if first.stuck:
            self.packets.extend(batch)
            self._get_stuck(0, now)
            return None
        copying = sg.n >= 2
        svc = 0
        copies = 0
        for p in batch:
            svc += sg.service_cycles(0, p.size_bytes)
            if copying:
                copies += copy_cost(p.size_bytes, self.costs)
        svc += self.costs.warmup * len(batch)
        if copying:
            dest = chain_buffer(sg.instance)
            for p in batch:
                p.owner = dest
        self.nf_cycles[0] += svc
        self.copy_cycles += copies
        self.cycles += svc + copies
        self.stall_ns += self._state_access(0, batch, now)
        self.packets.extend(batch)
        if len(batch) < self.b_m or self.dma_batches >= sg.batch_multiplier:
            self.done_pulling = True
            return None
        return self.now()

    def _get_stuck(self, index: int, now: TimeNs) -> None:
        self.stuck_at = index
        self.stuck_since = now
        self.done_pulling = True

    def _state_access(self, index: int, batch, now: TimeNs) -> TimeNs:
        table = self.sg.state_tables[index]
        if table is None or self.store is None:
            return 0
        stall = 0
        for p in batch:
            _, fetch = table.read(p.flow, self.store, now)
            if fetch is not None:
                self.remote_fetches += 1
                stall = max(stall, fetch.completes_at - now)
            table.update(p.flow, p.id)
        return stall

    def finish(self) -> tuple[BatchTrace, list[tuple[PacketRec, TimeNs]]]:
        """Run NFs 2..N over the round; returns the trace and per-packet departures."""
        sg = self.sg
        n = sg.n
        pkts = self.packets
        costs = self.costs
        ctx = 0
        hop_cycles = 0.0
        departures: list[tuple[PacketRec, TimeNs]] = []
        if n == 1:
            # no downstream: packets leave as the first NF finishes them
            departures = self._single_nf_departures()
        else:
            buf = chain_buffer(sg.instance)
            hop = costs.per_hop_overhead
            for i in range(1, n):
                self.cycles += costs.t_ctx
                ctx += 1
                now = self.now()
                if sg.tasks[i].profile.stuck:
                    self._get_stuck(i, now)
                    break
                if self.ledger is not None:
                    self.ledger.record_batch(now, sg.instance, i, pkts, buf)
                self.stall_ns += self._state_access(i, pkts, now)
                svc = 0
                if i == n - 1:
                    base = self.start_ns + self.stall_ns
                    freq = self.freq
                    cyc = self.cycles
                    app = departures.append
                    for p in pkts:
                        c = sg.service_cycles(i, p.size_bytes)
                        svc += c
                        cyc += c + hop
                        app((p, base + int(round(cyc * NS_PER_S / freq))))
                    self.cycles = cyc
                else:
                    for p in pkts:
                        svc += sg.service_cycles(i, p.size_bytes)
                    self.cycles += svc + hop * len(pkts)
                self.nf_cycles[i] += svc
                hop_cycles += hop * len(pkts)
            else:
                # final yield back to the first NF
                self.cycles += costs.t_ctx
                ctx += 1
        if self.ledger is not None and self.stuck_at is None:
            self.ledger.release(pkts)
        busy = self.copy_cycles + sum(self.nf_cycles) + ctx * costs.t_ctx + hop_cycles
        trace = BatchTrace(
            round_id=self.id, instance=sg.instance, chain_id=sg.chain.chain_id,
            core_id=sg.core.core_id if sg.core else "", start_ns=self.start_ns,
            end_ns=self.now(), packets=len(pkts),
            copies=len(pkts) if n >= 2 else 0, ctx_switches=ctx, busy_cycles=busy,
            nf_cycles=tuple(self.nf_cycles), copy_cycles=self.copy_cycles,
            ctx_cycles=ctx * costs.t_ctx, hop_cycles=hop_cycles,
            dma_batches=self.dma_batches, stall_ns=self.stall_ns,
            terminated=self.stuck_at is not None,
        )
        return trace, departures

    def _single_nf_departures(self) -> list[tuple[PacketRec, TimeNs]]:
        # replay the first NF's per-packet completion times from the round start;
        # state stalls were applied per NIC batch, so spread them at batch granularity
        sg = self.sg
        freq = self.freq
        cyc = 0
        out = []
        warm = self.costs.warmup
        for p in self.packets:
            cyc += sg.service_cycles(0, p.size_bytes) + warm
            out.append((p, self.start_ns + cycles_to_ns(cyc, freq) + self.stall_ns))
        return out


def execute_batch_round(sched: CoopScheduler, sg: SGroup, now: TimeNs, costs: CostConstants,
                        b_m: int = 32, ledger: Optional[OwnershipLedger] = None,
                        store: Optional[StateStoreModel] = None, round_id: int = 0,
                        on_pull: Optional[Callable[[TimeNs], None]] = None):
    """Run one complete round against whatever is queued now (no new arrivals).

    ``on_pull`` is called with each intermediate pull time, letting a caller
    inject arrivals before the next pull.
    """
    if sg.core is None or sg.core.attached is not sg:
        raise SchedulerError(f"sgroup {sg.instance} is not attached")
    rnd = BatchRound(round_id, sg, now, costs, b_m, ledger, store)
    t = rnd.pull()
    while t is not None:
        if on_pull is not None:
            on_pull(t)
        t = rnd.pull()
    trace, departures = rnd.finish()
    round_finished(sched, sg)
    return trace, departures
