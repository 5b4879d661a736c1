"""Per-NF flow state: local flow table plus a modeled remote store.

Local ``update``/``read`` cost nothing. A read miss produces a
:class:`RemoteFetch` that completes after a latency sampled from the store
model; the engine charges that delay to the stalled batch only.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .core_types import FlowKey, TimeNs

_MISS = object()


@dataclass
class StateStoreModel:
    """Latency model for the remote global-state store."""

    sync_period_ns: TimeNs
    latency_ns: TimeNs = 310_000
    # optional sampler overriding the constant latency
    sampler: Optional[Callable[[random.Random], TimeNs]] = None
    rng: random.Random = field(default_factory=lambda: random.Random(0))

    def sample_latency(self) -> TimeNs:
        if self.sampler is None:
            return self.latency_ns
        return max(0, int(self.sampler(self.rng)))


@dataclass(frozen=True)
class RemoteFetch:
    flow: FlowKey
    issued_at: TimeNs
    completes_at: TimeNs


@dataclass(frozen=True)
class SyncEvent:
    time: TimeNs
    flushed: int
    # background round-trip; never added to packet latency
    completes_at: TimeNs


@dataclass
class FlowStateTable:
    entries: dict = field(default_factory=dict)
    dirty: set = field(default_factory=set)
    fetches: list = field(default_factory=list)
    syncs: list = field(default_factory=list)
    misses: int = 0
    hits: int = 0

    def update(self, flow: FlowKey, val: Any) -> None:
        self.entries[flow] = val
        self.dirty.add(flow)

    def read(self, flow: FlowKey, store: StateStoreModel, now: TimeNs = 0):
        """Return ``(value, None)`` on a hit or ``(None, RemoteFetch)`` on a miss."""
        val = self.entries.get(flow, _MISS)
        if val is not _MISS:
            self.hits += 1
            return val, None
        self.misses += 1
        fetch = RemoteFetch(flow, now, now + store.sample_latency())
        self.fetches.append(fetch)
        return None, fetch


def state_update(table: FlowStateTable, flow: FlowKey, val: Any) -> FlowStateTable:
    table.update(flow, val)
    return table


def state_read(table: FlowStateTable, flow: FlowKey, store: StateStoreModel, now: TimeNs = 0):
    return table.read(flow, store, now)


def periodic_sync(table: FlowStateTable, store: StateStoreModel, now: TimeNs) -> SyncEvent:
    """Flush the dirty set; the round trip is charged to a background event."""
    if store.sync_period_ns <= 0:
        raise ValueError("sync_period must be positive")
    flushed = len(table.dirty)
    table.dirty.clear()
    rtt = store.sample_latency() if flushed else 0
    ev = SyncEvent(now, flushed, now + rtt)
    table.syncs.append(ev)
    return ev


def sync_times(period_ns: TimeNs, duration_ns: TimeNs) -> list[TimeNs]:
    """Sync instants at each multiple of the period within ``(0, duration]``."""
    return list(range(period_ns, duration_ns + 1, period_ns))
