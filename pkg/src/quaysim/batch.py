"""Adaptive batch sizing for cooperatively scheduled chains.

A chain of N NFs pays N context switches per round. Processing ``B_v`` NIC
batches of ``b_v`` packets per round amortizes them, so the achievable rate is

    R_v(B_v) = Freq / (sum_T + N * T_ctx * Freq / (B_v * b_v))

against the single-thread ideal ``Freq / sum_T``. The chosen ``B_v`` is the
smallest one keeping ``R_v >= p * ideal``.

``T_ctx`` is held in cycles (``T_ctx[s] * Freq``), so the product in the
denominator is formed without a float round trip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .core_types import ChainSpec, CostConstants
from .packet_plane import copy_cost


@dataclass(frozen=True)
class ChainCostSummary:
    service_cycles: tuple[float, ...]
    # context switches paid per round; None means one per NF
    switches: Optional[int] = None

    def __post_init__(self):
        if not self.service_cycles:
            raise ValueError("chain needs at least one NF")
        if any(t <= 0 for t in self.service_cycles):
            raise ValueError("service cycles must be positive")

    @property
    def n(self) -> int:
        return len(self.service_cycles)

    @property
    def ctx_per_round(self) -> int:
        return self.n if self.switches is None else self.switches

    @property
    def sum_t(self) -> float:
        return sum(self.service_cycles)

    @classmethod
    def of(cls, cycles: Sequence[float], switches: Optional[int] = None) -> "ChainCostSummary":
        return cls(tuple(cycles), switches)


@dataclass(frozen=True)
class BatchParams:
    freq_hz: int = 2_400_000_000
    t_ctx_cycles: int = 2143
    b_v: float = 32
    p: float = 0.95
    b_m: int = 32

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError(f"p must be in (0, 1), got {self.p}")
        if not 1 <= self.b_v <= self.b_m:
            raise ValueError(f"b_v must be in [1, {self.b_m}], got {self.b_v}")
        if self.freq_hz <= 0 or self.t_ctx_cycles < 0:
            raise ValueError("freq must be positive and t_ctx non-negative")

    @property
    def t_ctx_seconds(self) -> float:
        return self.t_ctx_cycles / self.freq_hz


def estimated_rate(c: ChainCostSummary, params: BatchParams, b_batches: int) -> float:
    """Packets/s a core sustains when the first NF takes ``b_batches`` NIC batches per round."""
    if b_batches < 1:
        raise ValueError("B_v must be >= 1")
    overhead = c.ctx_per_round * params.t_ctx_cycles / (b_batches * params.b_v)
    return params.freq_hz / (c.sum_t + overhead)


def ideal_rate(c: ChainCostSummary, freq_hz: int) -> float:
    if c.sum_t <= 0:
        raise ValueError("sum_T must be positive")
    return freq_hz / c.sum_t


def min_batch(c: ChainCostSummary, params: BatchParams) -> int:
    """Smallest ``B_v >= 1`` meeting the rate ratio, in closed form (exact rationals)."""
    p = Fraction(params.p)
    need = (p * c.ctx_per_round * params.t_ctx_cycles) / ((1 - p) * Fraction(params.b_v) * _exact_sum(c))
    return max(1, math.ceil(need))


def min_batch_scan(c: ChainCostSummary, params: BatchParams, limit: int = 1 << 20) -> int:
    """Same answer as :func:`min_batch` by scanning ``B_v = 1, 2, ...``."""
    p = Fraction(params.p)
    sum_t = _exact_sum(c)
    bv = Fraction(params.b_v)
    for b in range(1, limit + 1):
        # R(b) >= p * R_hat  <=>  sum_T >= p * (sum_T + N*T_ctx/(b*b_v))
        if sum_t >= p * (sum_t + Fraction(c.ctx_per_round * params.t_ctx_cycles) / (b * bv)):
            return b
    raise RuntimeError("no feasible batch multiplier below limit")


def _exact_sum(c: ChainCostSummary) -> Fraction:
    return sum((Fraction(t) for t in c.service_cycles), Fraction(0))


def achieved_ratio(c: ChainCostSummary, params: BatchParams, b_batches: int) -> float:
    return estimated_rate(c, params, b_batches) / ideal_rate(c, params.freq_hz)


def effective_costs(chain: ChainSpec, costs: CostConstants, size_bytes: int) -> ChainCostSummary:
    """Per-NF cycles per packet as a core actually pays them.

    The first NF also pays the warm-up and, for chains longer than one NF, the
    copy into the chain buffer; every downstream hop pays the per-hop overhead.
    """
    out = []
    for i, nf in enumerate(chain.nfs):
        t = float(nf.service_cost(size_bytes))
        if i == 0:
            t += costs.warmup
            if chain.length >= 2:
                t += copy_cost(size_bytes, costs)
        else:
            t += costs.per_hop_overhead
        out.append(t)
    return ChainCostSummary(tuple(out), 0 if chain.length == 1 else None)
