"""``quaysim`` command line: run, profile, batch-calc and sweep.

Exit codes: 0 success, 2 invalid input (scenario file, arguments, unknown
chain), 3 internal failure (conservation check or batch self-check).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .batch import BatchParams, ChainCostSummary, achieved_ratio, estimated_rate, ideal_rate, min_batch, min_batch_scan
from .controller import InfeasibleSLO, pick_load_threshold
from .coop_sched import write_trace_csv
from .core_types import NS_PER_US, ValidationError
from .engine import Scenario, ScenarioError, run_scenario
from .metrics import ConservationError, MetricsReport
from .profiling import measure_max_rate, profile_chain
from .scenario_io import ScenarioFileError, load_scenario

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INTERNAL = 3

SWEEP_PARAMS = ("load_threshold", "slo", "flow_rate", "chain_length")
SWEEP_HEADER = ["param", "value", "seed", "p50_ns", "p99_ns", "max_qlen", "loss_rate", "avg_cores",
                "max_cores", "processed", "throughput_pps", "per_core_pps"]

log = logging.getLogger("quaysim")


def _seed(args, default: int = 1) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("QUAYSIM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ScenarioError(f"QUAYSIM_SEED must be an integer, got {env!r}") from None
    return default


def summary_table(rep: MetricsReport) -> str:
    """Plain-text run summary; every number is printed as stored in the report."""
    lines = [f"{'chain':<12} {'p50_ns':>10} {'p99_ns':>10} {'p999_ns':>10} {'processed':>10} {'dropped':>8}"]
    for cid, cm in rep.chains.items():
        lines.append(f"{cid:<12} {cm['p50_ns']:>10} {cm['p99_ns']:>10} {cm['p999_ns']:>10} "
                     f"{cm['processed']:>10} {cm['dropped']:>8}")
    lines += [
        f"injected {rep.injected}  processed {rep.processed}  dropped {rep.dropped}"
        f"  in_flight {rep.in_flight}  bypass {rep.bypass}",
        f"loss_rate {rep.loss_rate!r}",
        f"avg_cores {rep.avg_cores!r}  max_cores {rep.max_cores}",
        f"copies {rep.copies}  ctx_switches {rep.ctx_switches}  rounds {rep.rounds}",
        f"violations spatial {rep.spatial_violations}  temporal {rep.temporal_violations}"
        f"  order {rep.order_violations}",
    ]
    if rep.faults:
        lines.append("faults " + "  ".join(f"{k} {v}" for k, v in rep.faults.items()))
    return "\n".join(lines)


# -- run ---------------------------------------------------------------------

def cmd_run(args) -> int:
    sc, output = load_scenario(args.scenario)
    sc = replace(sc, seed=_seed(args)) if args.seed is not None or "QUAYSIM_SEED" in os.environ else sc
    out = Path(args.out or output.dir or "quaysim-out")
    out.mkdir(parents=True, exist_ok=True)
    res = run_scenario(sc)
    rep = res.report
    (out / "metrics.json").write_text(rep.to_json() + "\n")
    rep.to_csv(out / "metrics.csv")
    if output.traces:
        write_trace_csv(res.traces, out / "traces.csv")
    if output.ledger:
        res.ledger.to_csv(out / "ledger.csv")
    if output.flows:
        res.flow_table.to_csv(out / "flows.csv")
    table = summary_table(rep)
    (out / "summary.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


# -- profile -----------------------------------------------------------------

def cmd_profile(args) -> int:
    sc, _ = load_scenario(args.scenario)
    chains = {c.chain_id: c for c in sc.cluster.chains}
    if args.chain not in chains:
        print(f"error: unknown chain {args.chain!r}", file=sys.stderr)
        return EXIT_INVALID
    chain = chains[args.chain]
    thresholds = args.thresholds or list(sc.profile_thresholds)
    size = int(sc.traffic.packet_size.center())
    curve = profile_chain(chain, thresholds, cluster=sc.cluster, size_bytes=size,
                          window_ns=sc.profile_window_ns, seed=_seed(args, sc.seed))
    out = Path(args.out) if args.out else None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        curve.to_csv(out)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["threshold_pct", "p99_ns", "max_qlen", "rate_pps"])
        for r in curve.rows:
            w.writerow([r.threshold_pct, r.p99_ns, r.max_qlen, repr(float(r.rate_pps))])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InfeasibleSLO)
        pct = pick_load_threshold(curve, chain.slo_p99_ns)
    for wmsg in caught:
        print(f"warning: {wmsg.message}", file=sys.stderr)
    print(f"max_rate_pps {curve.max_rate!r}", file=sys.stderr)
    print(f"selected threshold {pct}% for slo_p99_ns {chain.slo_p99_ns}", file=sys.stderr)
    return EXIT_OK


# -- batch-calc --------------------------------------------------------------

def cmd_batch_calc(args) -> int:
    cycles = args.service_cycles
    if args.n is not None:
        if len(cycles) == 1:
            cycles = cycles * args.n
        elif len(cycles) != args.n:
            raise ScenarioError(f"-n {args.n} but {len(cycles)} service costs given")
    summary = ChainCostSummary.of(cycles)
    params = BatchParams(freq_hz=args.freq, t_ctx_cycles=args.t_ctx, b_v=args.b, p=args.p,
                         b_m=max(args.b_m, args.b))
    closed = min_batch(summary, params)
    brute = min_batch_scan(summary, params)
    r = estimated_rate(summary, params, closed)
    r_hat = ideal_rate(summary, params.freq_hz)
    print(f"B_v closed_form {closed}")
    print(f"B_v brute_force {brute}")
    print(f"R_v_pps {r!r}")
    print(f"R_hat_pps {r_hat!r}")
    print(f"ratio {achieved_ratio(summary, params, closed)!r}")
    if closed != brute:
        print("error: closed-form and brute-force batch sizes differ", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


# -- sweep -------------------------------------------------------------------

def _sweep_one(sc: Scenario, param: str, value: float, seed: int) -> list:
    sc = replace(sc, seed=seed)
    cl = sc.cluster
    if param == "load_threshold":
        frac = value / 100 if value > 1.5 else value
        cl = replace(cl, chains=tuple(replace(c, load_threshold=frac) for c in cl.chains))
    elif param == "slo":
        cl = replace(cl, chains=tuple(replace(c, slo_p99_ns=int(round(value * NS_PER_US)))
                                      for c in cl.chains))
    elif param == "flow_rate":
        sc = replace(sc, traffic=replace(sc.traffic, flow_rate=float(value)))
    elif param == "chain_length":
        n = int(value)
        cl = replace(cl, chains=tuple(replace(c, nfs=tuple(c.nfs[i % len(c.nfs)] for i in range(n)))
                                      for c in cl.chains))
    sc = replace(sc, cluster=cl)
    res = run_scenario(sc)
    rep = res.report
    size = int(sc.traffic.packet_size.center())
    per_core = measure_max_rate(cl.chains[0], cl, size) if param == "chain_length" else ""
    throughput = rep.processed * 1e9 / rep.duration_ns if rep.duration_ns else 0.0
    return [param, value, seed, rep.p50_ns, rep.p99_ns, rep.max_qlen, rep.loss_rate, rep.avg_cores,
            rep.max_cores, rep.processed, throughput, per_core]


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        print(f"error: unknown sweep parameter {args.param!r}; choose from {', '.join(SWEEP_PARAMS)}",
              file=sys.stderr)
        return EXIT_INVALID
    sc, _ = load_scenario(args.scenario)
    base = _seed(args, sc.seed)
    values = list(args.values)
    # independent seeds per point, derived from the base seed
    seeds = [base] * len(values) if args.common_seed else [base * 1_000 + i for i in range(len(values))]
    jobs = ([sc] * len(values), [args.param] * len(values), values, seeds)
    if args.threads <= 1:
        rows = list(map(_sweep_one, *jobs))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.threads) as ex:
            rows = list(ex.map(_sweep_one, *jobs))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quaysim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="overrides QUAYSIM_SEED and the file")
        sp.add_argument("--out", default=None)
        sp.add_argument("--threads", type=int, default=1, help="parallel scenarios (sweep only)")

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario")
    common(r)
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("profile", help="latency profile of one chain on one core")
    pr.add_argument("scenario")
    pr.add_argument("--chain", required=True)
    pr.add_argument("--thresholds", type=int, nargs="+", default=None, help="percent values")
    common(pr)
    pr.set_defaults(func=cmd_profile)

    b = sub.add_parser("batch-calc", help="minimum batch multiplier and rates")
    b.add_argument("service_cycles", type=float, nargs="+", help="per-NF cycles per packet")
    b.add_argument("-n", type=int, default=None, help="chain length (repeats a single cost)")
    b.add_argument("--freq", type=int, default=2_400_000_000)
    b.add_argument("--t-ctx", type=int, default=2143)
    b.add_argument("-b", type=int, default=32, help="NIC batch size b_v")
    b.add_argument("--b-m", type=int, default=32)
    b.add_argument("-p", type=float, default=0.95)
    common(b)
    b.set_defaults(func=cmd_batch_calc)

    s = sub.add_parser("sweep", help="one run per parameter value, CSV out")
    s.add_argument("scenario")
    s.add_argument("--param", required=True)
    s.add_argument("--values", type=float, nargs="+", required=True)
    s.add_argument("--common-seed", action="store_true",
                   help="reuse the base seed for every value instead of deriving one per value")
    common(s)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioFileError, ValidationError) as e:
        for msg in getattr(e, "errors", [str(e)]):
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ConservationError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
