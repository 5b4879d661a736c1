"""NIC VF queues, per-chain packet buffers, copy costs and the ownership ledger.

Only the first NF of a chain may touch the NIC buffer; it copies each packet
into the chain buffer, which downstream NFs then share zero-copy. The
:class:`OwnershipLedger` records every access so that spatial and temporal
isolation can be checked after (or during) a run.
"""

from __future__ import annotations

import csv
import functools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

from .core_types import (
    MAX_PACKET_BYTES,
    MIN_PACKET_BYTES,
    BufferId,
    CostConstants,
    Cycles,
    PacketRec,
    TimeNs,
    chain_buffer,
    nic_buffer,
)

DEFAULT_COSTS = CostConstants()


@dataclass
class NicVfQueue:
    instance: int
    capacity: int = 128
    queue: deque = field(default_factory=deque)
    drops: int = 0
    accepted: int = 0

    def __post_init__(self):
        self.buffer = nic_buffer(self.instance)

    def __len__(self) -> int:
        return len(self.queue)


def vf_enqueue(q: NicVfQueue, p: PacketRec) -> bool:
    """Append ``p`` if there is room; otherwise count a drop. Returns acceptance."""
    if len(q.queue) >= q.capacity:
        q.drops += 1
        return False
    p.owner = q.buffer
    q.queue.append(p)
    q.accepted += 1
    return True


def dma_batch(q: NicVfQueue, b_m: int, ledger: Optional["OwnershipLedger"] = None,
              now: TimeNs = 0) -> list[PacketRec]:
    """Hand up to ``b_m`` queued packets to the chain's first NF."""
    n = min(len(q.queue), b_m)
    popleft = q.queue.popleft
    batch = [popleft() for _ in range(n)]
    if ledger is not None and batch:
        ledger.record_batch(now, q.instance, 0, batch, q.buffer)
    return batch


@functools.lru_cache(maxsize=4096)
def copy_cost(size_bytes: int, costs: CostConstants = DEFAULT_COSTS) -> Cycles:
    """Cycles to copy one packet from the NIC buffer into the chain buffer.

    Flat below the small-packet anchor, linear between the two anchors.
    """
    if not MIN_PACKET_BYTES <= size_bytes <= MAX_PACKET_BYTES:
        raise ValueError(f"packet size {size_bytes} outside [64, 1500]")
    lo_b, lo_c = costs.copy_small_bytes, costs.copy_small_cycles
    hi_b, hi_c = costs.copy_large_bytes, costs.copy_large_cycles
    if size_bytes <= lo_b:
        return lo_c
    num = (size_bytes - lo_b) * (hi_c - lo_c)
    den = hi_b - lo_b
    return lo_c + (2 * num + den) // (2 * den)


def copy_into_chain_buffer(batch: list[PacketRec], instance: int,
                           costs: CostConstants = DEFAULT_COSTS) -> Cycles:
    """Move ``batch`` into the chain buffer of ``instance``; returns cycles charged."""
    dest = chain_buffer(instance)
    total = 0
    for p in batch:
        total += copy_cost(p.size_bytes, costs)
        p.owner = dest
    return total


def ownership_transfer_cost(mode: str, costs: CostConstants = DEFAULT_COSTS) -> Cycles:
    if mode == "context_switch":
        return costs.t_ctx
    if mode == "remap":
        return costs.unmap + costs.map
    raise ValueError(f"unknown ownership transfer mode {mode!r}")


def remap_ratio(costs: CostConstants = DEFAULT_COSTS) -> float:
    """How many context switches one unmap+map ownership transfer is worth."""
    return ownership_transfer_cost("remap", costs) / ownership_transfer_cost("context_switch", costs)


class Access(NamedTuple):
    time_ns: TimeNs
    instance: int
    nf_index: int
    packet_id: int
    buffer: BufferId
    violation: bool


@dataclass
class Violation:
    kind: str  # "spatial" | "temporal"
    access: Access
    reason: str


class OwnershipLedger:
    """Append-only access log with online isolation checks.

    Violations are recorded, never raised. With ``keep_log=False`` only the
    checks and violation list are kept, which is what long runs use.
    """

    def __init__(self, keep_log: bool = True):
        self.keep_log = keep_log
        self.log: list[Access] = []
        self.violations: list[Violation] = []
        self.accesses = 0
        # packet id -> highest NF index that has processed it in this epoch
        self._progress: dict[int, int] = {}

    def record_access(self, now: TimeNs, instance: int, nf_index: int,
                      packet_id: int, buffer: BufferId) -> bool:
        self.accesses += 1
        reasons = []
        if buffer.instance != instance:
            reasons.append(("spatial", f"instance {instance} touched buffer {buffer.kind}:{buffer.instance}"))
        if buffer.kind == "nic" and nf_index != 0:
            reasons.append(("spatial", f"NF {nf_index} touched NIC buffer"))
        done = self._progress.get(packet_id, -1)
        if nf_index >= 1 and done < nf_index - 1:
            reasons.append(("temporal", f"NF {nf_index} before NF {nf_index - 1} completed packet {packet_id}"))
        if nf_index > done:
            self._progress[packet_id] = nf_index
        acc = Access(now, instance, nf_index, packet_id, buffer, bool(reasons))
        if self.keep_log:
            self.log.append(acc)
        for kind, why in reasons:
            self.violations.append(Violation(kind, acc, why))
        return not reasons

    def record_batch(self, now: TimeNs, instance: int, nf_index: int,
                     packets: Iterable[PacketRec], buffer: BufferId) -> int:
        """Record one NF touching a whole batch; returns the number of violating accesses."""
        # fast path for the common, well-formed case
        progress = self._progress
        prev = nf_index - 1
        spatial_ok = buffer.instance == instance and (buffer.kind != "nic" or nf_index == 0)
        bad = 0
        if spatial_ok and not self.keep_log:
            for p in packets:
                if nf_index and progress.get(p.id, -1) < prev:
                    bad += not self.record_access(now, instance, nf_index, p.id, buffer)
                    continue
                self.accesses += 1
                progress[p.id] = nf_index
            return bad
        for p in packets:
            bad += not self.record_access(now, instance, nf_index, p.id, buffer)
        return bad

    def release(self, packets: Iterable[PacketRec]) -> None:
        """Close the epoch for packets that left the chain (or were dropped)."""
        pop = self._progress.pop
        for p in packets:
            pop(p.id, None)

    def entries(self) -> list[Access]:
        """The log ordered by time (stable for equal times)."""
        return sorted(self.log, key=lambda a: a.time_ns)

    def count(self, kind: str) -> int:
        return sum(1 for v in self.violations if v.kind == kind)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ns", "chain_id", "nf_index", "packet_id", "buffer_id", "violation_flag"])
            for a in self.entries():
                w.writerow([a.time_ns, a.instance, a.nf_index, a.packet_id,
                            f"{a.buffer.kind}:{a.buffer.instance}", int(a.violation)])
