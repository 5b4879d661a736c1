"""Ingress: flow classification, instance selection and rule installation.

A new flow goes to the most loaded instance that is not overloaded, so
instances fill up before new ones are woken; only when none qualifies is an
idle instance taken from the least loaded worker. Until the switch rule is
installed the flow's packets are buffered here, so installation latency never
costs packets.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .core_types import ChainSpec, FlowKey, PacketRec, TimeNs


class NoCapacity(RuntimeError):
    """No active or idle instance can take the flow."""


@dataclass(frozen=True)
class FlowRule:
    flow: FlowKey
    worker_id: str
    instance: int
    l2_tag: int
    installed_at: TimeNs


@dataclass
class PendingInstall:
    worker_id: str
    instance: int
    l2_tag: int
    completes_at: TimeNs
    packets: list = field(default_factory=list)


@dataclass
class FlowTable:
    rules: dict = field(default_factory=dict)
    pending: dict = field(default_factory=dict)
    # flows whose assignment was rejected; their packets are dropped
    rejected: set = field(default_factory=set)
    # flows no chain's filter matched
    bypass: set = field(default_factory=set)

    def begin_install(self, flow: FlowKey, worker_id: str, instance: int, l2_tag: int,
                      now: TimeNs, latency: TimeNs) -> PendingInstall:
        if flow in self.rules or flow in self.pending:
            raise ValueError(f"flow {flow} already routed")
        entry = PendingInstall(worker_id, instance, l2_tag, now + latency)
        self.pending[flow] = entry
        return entry

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src_ip", "dst_ip", "src_port", "dst_port", "proto",
                        "worker", "instance", "l2_tag", "installed_at_ns"])
            for r in sorted(self.rules.values(), key=lambda r: (r.installed_at, r.flow)):
                w.writerow([*r.flow, r.worker_id, r.instance, r.l2_tag, r.installed_at])


def classify(chains: Sequence[ChainSpec], flow: FlowKey) -> Optional[ChainSpec]:
    """First chain (list order) whose filter matches; None means bypass."""
    for c in chains:
        if c.traffic_filter.matches(flow):
            return c
    return None


def pick_highest_load_without_overload(loads: Iterable[tuple[int, float]],
                                       threshold: float) -> Optional[int]:
    best = None
    for inst, load in loads:
        if load > threshold:
            continue
        if best is None or load > best[1] or (load == best[1] and inst < best[0]):
            best = (inst, load)
    return None if best is None else best[0]


def pick_idle_from_lowest_load_worker(idle: Iterable[tuple[int, float]]) -> Optional[int]:
    """``idle`` holds (instance, load of its worker) pairs."""
    best = None
    for inst, wload in idle:
        if best is None or wload < best[1] or (wload == best[1] and inst < best[0]):
            best = (inst, wload)
    return None if best is None else best[0]


@dataclass(frozen=True)
class Assignment:
    instance: int
    activated: bool  # True if taken from the idle pool


def handle_new_flow(active_loads: Sequence[tuple[int, float]],
                    idle: Sequence[tuple[int, float]], threshold: float) -> Assignment:
    """Choose an instance for a new flow; raises NoCapacity if there is none."""
    inst = pick_highest_load_without_overload(active_loads, threshold)
    if inst is not None:
        return Assignment(inst, False)
    inst = pick_idle_from_lowest_load_worker(idle)
    if inst is None:
        raise NoCapacity("no non-overloaded active instance and no idle instance")
    return Assignment(inst, True)


def install_rule_complete(table: FlowTable, flow: FlowKey, now: TimeNs) -> tuple[FlowRule, list[PacketRec]]:
    """Activate the rule; returns it and the buffered packets in arrival order."""
    entry = table.pending.pop(flow)
    rule = FlowRule(flow, entry.worker_id, entry.instance, entry.l2_tag, now)
    table.rules[flow] = rule
    return rule, entry.packets


def route_packet(table: FlowTable, p: PacketRec):
    """Look the packet's flow up: ``("vf", rule)``, ``("buffered", entry)``,
    ``("rejected", None)``, ``("bypass", None)`` or ``("new", None)`` for an
    unseen flow."""
    rule = table.rules.get(p.flow)
    if rule is not None:
        return "vf", rule
    entry = table.pending.get(p.flow)
    if entry is not None:
        entry.packets.append(p)
        return "buffered", entry
    if p.flow in table.rejected:
        return "rejected", None
    if p.flow in table.bypass:
        return "bypass", None
    return "new", None
