"""Per-run metrics: latency percentiles, loss, copies, switches and core usage."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


class ConservationError(RuntimeError):
    """Packets were created or lost by the simulator itself."""


def nearest_rank(sorted_values, q: float):
    """Nearest-rank percentile of an ascending sequence; ``q`` in (0, 1]."""
    n = len(sorted_values)
    if n == 0:
        return 0
    rank = max(1, math.ceil(q * n))
    return sorted_values[rank - 1]


def percentiles(values, qs=(0.5, 0.99, 0.999)) -> list:
    arr = np.sort(np.asarray(values, dtype=np.int64))
    return [int(nearest_rank(arr, q)) for q in qs]


@dataclass
class ChainMetrics:
    chain_id: str
    processed: int = 0
    dropped: int = 0
    p50_ns: int = 0
    p99_ns: int = 0
    p999_ns: int = 0
    max_ns: int = 0
    mean_ns: float = 0.0
    instances_used: int = 0


@dataclass
class MetricsReport:
    injected: int = 0
    processed: int = 0
    dropped: int = 0
    in_flight: int = 0
    bypass: int = 0
    # packets held at ingress while their flow rule was being installed
    buffered: int = 0
    loss_rate: float = 0.0
    p50_ns: int = 0
    p99_ns: int = 0
    p999_ns: int = 0
    copies: int = 0
    ctx_switches: int = 0
    rounds: int = 0
    busy_cycles: float = 0.0
    realized_batch: float = 0.0
    avg_cores: float = 0.0
    max_cores: int = 0
    duration_ns: int = 0
    monitor_accepted: int = 0
    monitor_suppressed: int = 0
    spatial_violations: int = 0
    temporal_violations: int = 0
    order_violations: int = 0
    remote_fetches: int = 0
    sync_events: int = 0
    vf_drops: int = 0
    rejected_drops: int = 0
    timeout_drops: int = 0
    max_qlen: int = 0
    faults: dict = field(default_factory=dict)
    chains: dict = field(default_factory=dict)

    def check_conservation(self) -> None:
        total = self.processed + self.dropped + self.in_flight + self.bypass
        if total != self.injected:
            raise ConservationError(
                f"injected {self.injected} != processed {self.processed} + dropped {self.dropped}"
                f" + in_flight {self.in_flight} + bypass {self.bypass}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self, path) -> None:
        """Flat ``metric,value`` rows; per-chain fields are prefixed with the chain id."""
        d = self.to_dict()
        chains = d.pop("chains")
        faults = d.pop("faults")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k in sorted(d):
                w.writerow([k, d[k]])
            for k in sorted(faults):
                w.writerow([f"fault.{k}", faults[k]])
            for cid in sorted(chains):
                for k, v in chains[cid].items():
                    if k != "chain_id":
                        w.writerow([f"{cid}.{k}", v])


def core_usage(changes: Sequence[tuple[int, int]], end_ns: int) -> tuple[float, int]:
    """Time-averaged and peak attached cores from ``(time, attached_count)`` steps."""
    if end_ns <= 0 or not changes:
        return 0.0, max((c for _, c in changes), default=0)
    area = 0
    peak = 0
    prev_t, prev_c = 0, 0
    for t, c in changes:
        t = min(t, end_ns)
        area += prev_c * (t - prev_t)
        prev_t, prev_c = t, c
        peak = max(peak, c)
    area += prev_c * (end_ns - prev_t)
    return area / end_ns, peak


def collect_metrics(latencies: dict, counters: dict, traces_summary: dict,
                    core_changes, end_ns: int, extra: dict | None = None) -> MetricsReport:
    """Assemble a report from raw per-chain latencies and run counters.

    Raises ConservationError if the packet accounting does not balance.
    """
    rep = MetricsReport(**counters)
    for k, v in traces_summary.items():
        setattr(rep, k, v)
    all_lat = []
    for cid in sorted(latencies):
        lat = np.asarray(latencies[cid], dtype=np.int64)
        cm = rep.chains.setdefault(cid, ChainMetrics(cid))
        if isinstance(cm, dict):
            cm = ChainMetrics(**cm)
            rep.chains[cid] = cm
        cm.processed = int(lat.size)
        if lat.size:
            s = np.sort(lat)
            cm.p50_ns, cm.p99_ns, cm.p999_ns = (int(nearest_rank(s, q)) for q in (0.5, 0.99, 0.999))
            cm.max_ns = int(s[-1])
            cm.mean_ns = float(s.mean())
            all_lat.append(lat)
    if all_lat:
        s = np.sort(np.concatenate(all_lat))
        rep.p50_ns, rep.p99_ns, rep.p999_ns = (int(nearest_rank(s, q)) for q in (0.5, 0.99, 0.999))
    rep.avg_cores, rep.max_cores = core_usage(core_changes, end_ns)
    rep.duration_ns = end_ns
    rep.loss_rate = rep.dropped / rep.injected if rep.injected else 0.0
    rep.realized_batch = rep.processed / rep.rounds if rep.rounds else 0.0
    for k, v in (extra or {}).items():
        setattr(rep, k, v)
    rep.chains = {cid: asdict(cm) if not isinstance(cm, dict) else cm
                  for cid, cm in sorted(rep.chains.items())}
    rep.check_conservation()
    return rep
