"""Synthetic flow-level traffic with a linear ramp in flow arrival rate.

Flows arrive as a Poisson process whose rate grows linearly from zero to
``flow_rate`` over ``ramp_ns`` and stays there. Each flow sends packets of one
size at a constant rate for its duration. With ``gap_mode="deterministic"``
packets are evenly spaced; ``"poisson"`` draws exponential gaps instead.

The distributions are synthetic defaults, not fitted to any trace.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .core_types import MAX_PACKET_BYTES, MIN_PACKET_BYTES, NS_PER_S, FlowKey, TimeNs

DIST_KINDS = ("constant", "uniform", "exponential", "lognormal", "choice")


@dataclass(frozen=True)
class Dist:
    kind: str = "constant"
    value: float = 0.0
    lo: float = 0.0
    hi: float = 0.0
    mean: float = 0.0
    sigma: float = 0.0
    values: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.kind not in DIST_KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "choice" and not self.values:
            raise ValueError("choice distribution needs values")

    def sample(self, rng: random.Random) -> float:
        k = self.kind
        if k == "constant":
            return self.value
        if k == "uniform":
            return rng.uniform(self.lo, self.hi)
        if k == "exponential":
            return rng.expovariate(1.0 / self.mean)
        if k == "lognormal":
            # ``mean`` is the median here
            return rng.lognormvariate(math.log(self.mean), self.sigma)
        return rng.choices(self.values, weights=self.weights or None)[0]

    def center(self) -> float:
        """Representative value (mean or median) used for planning."""
        k = self.kind
        if k == "constant":
            return self.value
        if k == "uniform":
            return (self.lo + self.hi) / 2
        if k in ("exponential", "lognormal"):
            return self.mean
        vals = sorted(self.values)
        return vals[len(vals) // 2]

    @classmethod
    def from_dict(cls, d) -> "Dist":
        if isinstance(d, (int, float)):
            return cls("constant", value=float(d))
        d = dict(d)
        for key in ("values", "weights"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Target:
    dst_ip: str = "192.168.0.1"
    dst_port: int = 80
    weight: float = 1.0


@dataclass(frozen=True)
class TrafficModel:
    flow_rate: float = 2.0  # flows/s at peak
    ramp_ns: TimeNs = 60 * NS_PER_S
    flow_duration_s: Dist = field(default_factory=lambda: Dist("exponential", mean=60.0))
    packet_rate: Dist = field(default_factory=lambda: Dist("constant", value=300.0))
    packet_size: Dist = field(default_factory=lambda: Dist("constant", value=1024))
    gap_mode: str = "deterministic"
    targets: tuple = (Target(),)
    packet_budget: Optional[int] = None
    duration_ns: Optional[TimeNs] = None
    seed: int = 1

    def __post_init__(self):
        if self.flow_rate < 0 or self.ramp_ns < 0:
            raise ValueError("flow rate and ramp must be non-negative")
        if self.gap_mode not in ("deterministic", "poisson"):
            raise ValueError(f"unknown gap_mode {self.gap_mode!r}")
        if not self.targets:
            raise ValueError("traffic needs at least one target")


@dataclass(frozen=True)
class FlowPlan:
    index: int
    key: FlowKey
    start_ns: TimeNs
    end_ns: TimeNs
    rate_pps: float
    size_bytes: int
    poisson: bool = False

    @property
    def gap_ns(self) -> float:
        return NS_PER_S / self.rate_pps


def flow_key(index: int, target: Target) -> FlowKey:
    src = f"10.{(index >> 16) & 255}.{(index >> 8) & 255}.{index & 255}"
    return FlowKey(src, target.dst_ip, 1024 + index % 60000, target.dst_port, 17)


def _ramp_inverse(s: float, rate: float, ramp_s: float) -> float:
    """Time (s) at which the ramped cumulative intensity reaches ``s``."""
    if ramp_s <= 0:
        return s / rate
    knee = rate * ramp_s / 2
    if s <= knee:
        return math.sqrt(2 * ramp_s * s / rate)
    return ramp_s + (s - knee) / rate


def clamp_size(x: float) -> int:
    return int(min(max(round(x), MIN_PACKET_BYTES), MAX_PACKET_BYTES))


def generate_traffic(model: TrafficModel, horizon_ns: Optional[TimeNs] = None) -> Iterator[FlowPlan]:
    """Flow plans in start-time order. Infinite unless a horizon or duration bounds it."""
    if model.flow_rate <= 0:
        return
    limit = horizon_ns if horizon_ns is not None else model.duration_ns
    arrivals = random.Random(model.seed)
    attrs = random.Random(model.seed * 1_000_003 + 17)
    weights = [t.weight for t in model.targets]
    ramp_s = model.ramp_ns / NS_PER_S
    s = 0.0
    index = 0
    while True:
        s += arrivals.expovariate(1.0)
        start = int(round(_ramp_inverse(s, model.flow_rate, ramp_s) * NS_PER_S))
        if limit is not None and start >= limit:
            return
        target = model.targets[0] if len(weights) == 1 else attrs.choices(model.targets, weights)[0]
        dur = max(model.flow_duration_s.sample(attrs), 0.0)
        rate = max(model.packet_rate.sample(attrs), 1e-9)
        size = clamp_size(model.packet_size.sample(attrs))
        yield FlowPlan(index, flow_key(index, target), start, start + int(round(dur * NS_PER_S)),
                       rate, size, model.gap_mode == "poisson")
        index += 1


def packet_times(plan: FlowPlan, seed: int = 0) -> Iterator[TimeNs]:
    """Packet send times of one flow within ``[start, end)``."""
    if plan.poisson:
        rng = random.Random(seed * 7_919 + plan.index)
        t = plan.start_ns + rng.expovariate(plan.rate_pps) * NS_PER_S
        while t < plan.end_ns:
            yield int(t)
            t += rng.expovariate(plan.rate_pps) * NS_PER_S
        return
    gap = plan.gap_ns
    k = 0
    while True:
        t = plan.start_ns + int(round(k * gap))
        if t >= plan.end_ns:
            return
        yield t
        k += 1


def iter_events(model: TrafficModel, horizon_ns: TimeNs) -> Iterator[tuple[TimeNs, str, int]]:
    """Merged (time, kind, flow index) stream of flow arrivals, packets and flow ends."""
    heap = []
    seq = 0
    for plan in generate_traffic(model, horizon_ns):
        heap.append((plan.start_ns, seq, "flow_arrival", plan.index))
        seq += 1
        for t in packet_times(plan, model.seed):
            if t >= horizon_ns:
                break
            heap.append((t, seq, "packet_arrival", plan.index))
            seq += 1
        if plan.end_ns < horizon_ns:
            heap.append((plan.end_ns, seq, "flow_end", plan.index))
            seq += 1
    heapq.heapify(heap)
    while heap:
        t, _, kind, idx = heapq.heappop(heap)
        yield t, kind, idx


def concurrent_flows(plans: Sequence[FlowPlan], t: TimeNs) -> int:
    return sum(1 for p in plans if p.start_ns <= t < p.end_ns)


def offered_rate(plans: Sequence[FlowPlan], t: TimeNs) -> float:
    return sum(p.rate_pps for p in plans if p.start_ns <= t < p.end_ns)
