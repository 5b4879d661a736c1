"""JSON scenario files.

Top-level sections: ``cluster``, ``chains``, ``traffic``, ``costs``,
``scaling`` and ``output``. Every section is optional except ``chains``;
unknown keys anywhere are rejected. Durations carry their unit in the key
name (``_ns``, ``_us``, ``_ms``, ``_s``). Errors name the file and the line
of the offending key. See ``docs/scenario.md`` for the full schema.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional

from .core_types import (
    NS_PER_MS,
    NS_PER_S,
    NS_PER_US,
    ChainSpec,
    ClusterSpec,
    CostConstants,
    MonitoringConfig,
    NfProfile,
    ScalingConfig,
    StateConfig,
    TrafficFilter,
    ValidationError,
    WorkerSpec,
    validate_cluster_spec,
)
from .engine import Scenario
from .traffic import Dist, Target, TrafficModel

UNIT_NS = {"_ns": 1, "_us": NS_PER_US, "_ms": NS_PER_MS, "_s": NS_PER_S}


class ScenarioFileError(ValidationError):
    """Malformed or invalid scenario file; messages are ``source:line: text``."""


@dataclass(frozen=True)
class OutputConfig:
    dir: Optional[str] = None
    traces: bool = True
    ledger: bool = True
    flows: bool = True


class _Ctx:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source
        self.lines = text.splitlines()
        self.errors: list[str] = []

    def line_of(self, key: str) -> int:
        pat = re.compile(r'"' + re.escape(key) + r'"\s*:')
        for i, line in enumerate(self.lines, 1):
            if pat.search(line):
                return i
        return 1

    def error(self, key: str, msg: str) -> None:
        self.errors.append(f"{self.source}:{self.line_of(key)}: {msg}")


def _time_fields(d: dict, names: dict[str, str], ctx: _Ctx, section: str) -> dict:
    """Turn ``<name>_<unit>`` keys into ns values for the target field names."""
    out = {}
    for key, val in d.items():
        for suffix, scale in UNIT_NS.items():
            base = key[: -len(suffix)]
            if key.endswith(suffix) and base in names:
                if not isinstance(val, (int, float)) or isinstance(val, bool):
                    ctx.error(key, f"{section}.{key} must be a number")
                else:
                    out[names[base]] = int(round(val * scale))
                break
    return out


def _check_keys(d: Any, allowed: set[str], ctx: _Ctx, section: str) -> dict:
    if not isinstance(d, dict):
        ctx.error(section.split(".")[-1], f"{section} must be an object")
        return {}
    for k in d:
        if k not in allowed:
            ctx.error(k, f"unknown key {section}.{k}")
    return d


def _timed_keys(bases) -> set[str]:
    return {b + s for b in bases for s in UNIT_NS}


def _workers(sec: dict, ctx: _Ctx) -> tuple:
    allowed = {"id", "cores", "freq_hz", "nic_rate_bps", "vf_queue_capacity", "max_batch", "max_sgroups"}
    out = []
    for i, w in enumerate(sec.get("workers", [{"id": "w0", "cores": 16}])):
        w = _check_keys(w, allowed, ctx, f"cluster.workers[{i}]")
        try:
            out.append(WorkerSpec(
                str(w.get("id", f"w{i}")), int(w.get("cores", 1)),
                freq_hz=int(w.get("freq_hz", 2_400_000_000)),
                nic_rate_bps=int(w.get("nic_rate_bps", 10_000_000_000)),
                vf_queue_capacity=int(w.get("vf_queue_capacity", 128)),
                max_batch=int(w.get("max_batch", 32)),
                max_sgroups=w.get("max_sgroups")))
        except (TypeError, ValueError) as e:
            ctx.error("workers", f"cluster.workers[{i}]: {e}")
    return tuple(out)


def _chains(items: Any, ctx: _Ctx) -> tuple:
    allowed = {"id", "nfs", "filter", "load_threshold", "batch_p"} | _timed_keys(["slo"])
    nf_allowed = {"name", "cycles", "per_byte_cycles", "stateful", "stuck"}
    f_allowed = {"src_prefix", "dst_prefix", "src_ports", "dst_ports", "proto"}
    if not isinstance(items, list):
        ctx.error("chains", "chains must be a list")
        return ()
    out = []
    for i, c in enumerate(items):
        c = _check_keys(c, allowed, ctx, f"chains[{i}]")
        nfs = []
        for j, nf in enumerate(c.get("nfs", [])):
            nf = _check_keys(nf, nf_allowed, ctx, f"chains[{i}].nfs[{j}]")
            if "cycles" not in nf:
                ctx.error("nfs", f"chains[{i}].nfs[{j}] needs cycles")
                continue
            nfs.append(NfProfile(str(nf.get("name", f"nf{j}")), int(nf["cycles"]),
                                 float(nf.get("per_byte_cycles", 0.0)),
                                 bool(nf.get("stateful", False)), bool(nf.get("stuck", False))))
        filt = _check_keys(c.get("filter", {}), f_allowed, ctx, f"chains[{i}].filter")
        try:
            tf = TrafficFilter(**{k: tuple(v) if isinstance(v, list) else v for k, v in filt.items()
                                  if k in f_allowed})
        except ValueError as e:
            ctx.error("filter", f"chains[{i}].filter: {e}")
            tf = TrafficFilter()
        slo = _time_fields(c, {"slo": "slo"}, ctx, f"chains[{i}]").get("slo", 100 * NS_PER_US)
        lt = c.get("load_threshold")
        out.append(ChainSpec(str(c.get("id", f"chain{i}")), tuple(nfs), tf, slo,
                             None if lt is None else float(lt), float(c.get("batch_p", 0.95))))
    return tuple(out)


def _dataclass_section(cls, d: dict, ctx: _Ctx, section: str, timed: dict[str, str]):
    plain = {f.name for f in fields(cls)} - set(timed.values())
    d = _check_keys(d, plain | _timed_keys(timed), ctx, section)
    kw = {k: v for k, v in d.items() if k in plain}
    kw.update(_time_fields(d, timed, ctx, section))
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        ctx.error(section, f"{section}: {e}")
        return cls()


def _dist(v: Any, ctx: _Ctx, key: str) -> Dist:
    try:
        return Dist.from_dict(v)
    except (TypeError, ValueError) as e:
        ctx.error(key, f"traffic.{key}: {e}")
        return Dist("constant", value=1.0)


def _traffic(d: dict, ctx: _Ctx):
    timed = {"ramp": "ramp_ns", "duration": "duration_ns", "drain": "drain_ns"}
    plain = {"flow_rate", "flow_duration_s", "packet_rate", "packet_size", "gap_mode", "targets",
             "packet_budget", "seed"}
    d = _check_keys(d, plain | _timed_keys(timed), ctx, "traffic")
    times = _time_fields(d, timed, ctx, "traffic")
    kw: dict = {}
    if "flow_rate" in d:
        kw["flow_rate"] = float(d["flow_rate"])
    for key in ("flow_duration_s", "packet_rate", "packet_size"):
        if key in d:
            kw[key] = _dist(d[key], ctx, key)
    if "gap_mode" in d:
        kw["gap_mode"] = d["gap_mode"]
    if "targets" in d:
        tg = []
        for i, t in enumerate(d["targets"]):
            t = _check_keys(t, {"dst_ip", "dst_port", "weight"}, ctx, f"traffic.targets[{i}]")
            tg.append(Target(**{k: v for k, v in t.items() if k in ("dst_ip", "dst_port", "weight")}))
        kw["targets"] = tuple(tg)
    if "ramp_ns" in times:
        kw["ramp_ns"] = times["ramp_ns"]
    try:
        model = TrafficModel(**kw)
    except (TypeError, ValueError) as e:
        ctx.error("traffic", f"traffic: {e}")
        model = TrafficModel()
    budget = d.get("packet_budget")
    return model, budget, times.get("duration_ns"), times.get("drain_ns"), d.get("seed")


def _scaling(d: dict, ctx: _Ctx):
    timed = {"loop_period": "loop_period_ns", "idle_window": "idle_window_ns",
             "install_latency": "install_latency_ns", "yield_timeout": "yield_timeout_ns"}
    extra = {"profile_thresholds"} | _timed_keys(["profile_window"])
    d = _check_keys(d, {f.name for f in fields(ScalingConfig)} - set(timed.values())
                    | _timed_keys(timed) | extra, ctx, "scaling")
    base = {k: v for k, v in d.items() if k not in extra}
    sc = _dataclass_section(ScalingConfig, base, ctx, "scaling", timed)
    thresholds = tuple(int(x) for x in d.get("profile_thresholds", range(10, 90, 5)))
    window = _time_fields(d, {"profile_window": "w"}, ctx, "scaling").get("w")
    return sc, thresholds, window


def parse_scenario(text: str, source: str = "<scenario>") -> tuple[Scenario, OutputConfig]:
    """Parse scenario JSON; raises ScenarioFileError listing every problem found."""
    ctx = _Ctx(text, source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioFileError([f"{source}:{e.lineno}: {e.msg} (column {e.colno})"]) from None
    doc = _check_keys(doc, {"cluster", "chains", "traffic", "costs", "scaling", "output"}, ctx, "scenario")
    if "chains" not in doc:
        ctx.errors.append(f"{source}:1: missing section chains")
    cl = _check_keys(doc.get("cluster", {}), {"workers", "monitoring", "state"}, ctx, "cluster")
    workers = _workers(cl, ctx)
    monitoring = _dataclass_section(MonitoringConfig, cl.get("monitoring", {}), ctx,
                                    "cluster.monitoring", {"period": "period_ns"})
    state = _dataclass_section(StateConfig, cl.get("state", {}), ctx, "cluster.state",
                               {"remote_latency": "remote_latency_ns", "sync_period": "sync_period_ns"})
    chains = _chains(doc.get("chains", []), ctx)
    costs = _dataclass_section(CostConstants, doc.get("costs", {}), ctx, "costs", {})
    scaling, thresholds, window = _scaling(doc.get("scaling", {}), ctx)
    traffic, budget, duration, drain, seed = _traffic(doc.get("traffic", {}), ctx)
    out = _check_keys(doc.get("output", {}), {f.name for f in fields(OutputConfig)}, ctx, "output")
    output = OutputConfig(**out) if not ctx.errors else OutputConfig()
    if ctx.errors:
        raise ScenarioFileError(ctx.errors)
    cluster = ClusterSpec(workers, chains, costs, scaling, monitoring, state)
    try:
        validate_cluster_spec(cluster)
    except ValidationError as e:
        raise ScenarioFileError([f"{source}:{_validation_line(ctx, m)}: {m}" for m in e.errors]) from None
    if budget is None and duration is None:
        raise ScenarioFileError([f"{source}:{ctx.line_of('traffic')}: traffic needs packet_budget or duration"])
    if budget is not None and (not isinstance(budget, int) or budget < 0):
        raise ScenarioFileError([f"{source}:{ctx.line_of('packet_budget')}: packet_budget must be a non-negative integer"])
    kw = dict(cluster=cluster, traffic=traffic, duration_ns=duration, packet_budget=budget,
              profile_thresholds=thresholds, profile_window_ns=window,
              keep_ledger_log=output.ledger, keep_traces=output.traces)
    if seed is not None:
        kw["seed"] = int(seed)
    if drain is not None:
        kw["drain_ns"] = drain
    return Scenario(**kw), output


def _validation_line(ctx: _Ctx, message: str) -> int:
    """Best line for a cluster validation message: the named id, else the section."""
    ids = re.findall(r"'([^']*)'(?:/(\S+))?", message)
    if ids:
        ident, nf = ids[0]
        for needle in filter(None, (nf, ident)):
            pat = re.compile(r':\s*"' + re.escape(needle) + '"')
            for i, line in enumerate(ctx.lines, 1):
                if pat.search(line):
                    return i
    for word, key in (("cost", "costs"), ("scale", "scaling"), ("period", "scaling"),
                      ("state", "state"), ("worker", "workers"), ("chain", "chains")):
        if word in message:
            return ctx.line_of(key)
    return 1


def load_scenario(path) -> tuple[Scenario, OutputConfig]:
    p = Path(path)
    return parse_scenario(p.read_text(), str(p))
