"""``bench`` command line.

  bench run --workload sl --threads 4 --strategy auto --verify --out report.csv
  bench gen --workload gs --out events.csv
  bench run --input events.csv --keys 10240 --verify

Exit codes: 0 ok, 1 verification failed, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import sys

from ..workloads import (WORKLOADS, WorkloadError, WorkloadKnobs, Workload, make_operator,
                         make_workload, read_events, write_events, initial_value)
from .bench import ConfigError, RunConfig, emit_report, parse_strategy, run_benchmark

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2


def _knob_args(p):
    d = WorkloadKnobs()
    p.add_argument("--workload", default="sl",
                   help=f"one of {', '.join(WORKLOADS)} or dynamic:<script>")
    p.add_argument("--theta", type=float, default=d.theta)
    p.add_argument("--abort", type=float, default=d.abort_ratio)
    p.add_argument("--len", type=int, default=d.txn_len)
    p.add_argument("--cost", type=float, default=d.udf_cost)
    p.add_argument("--multi", type=int, default=d.multi_access)
    p.add_argument("--interval", type=int, default=d.interval)
    p.add_argument("--keys", type=int, default=d.key_space)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--batches", type=int, default=1, help="batches to generate")
    p.add_argument("--window", type=int, default=d.window)
    p.add_argument("--period", type=int, default=d.period)


def _parser():
    ap = argparse.ArgumentParser(prog="bench")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a benchmark")
    _knob_args(r)
    r.add_argument("--input", help="CSV event file instead of a generator")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--strategy", default="auto")
    r.add_argument("--thresholds")
    r.add_argument("--speculate", action=argparse.BooleanOptionalAction, default=None)
    r.add_argument("--shuffle", type=float, default=0.0, help="arrival displacement bound")
    r.add_argument("--verify", action="store_true")
    r.add_argument("--out", help="report path (.csv or .json)")
    r.add_argument("--trace", action="store_true", help="print decision trace lines")
    g = sub.add_parser("gen", help="write a generated event file")
    _knob_args(g)
    g.add_argument("--out", required=True)
    return ap


def _knobs(a) -> WorkloadKnobs:
    return WorkloadKnobs(theta=a.theta, abort_ratio=a.abort, txn_len=a.len, udf_cost=a.cost,
                         multi_access=a.multi, interval=a.interval, key_space=a.keys,
                         seed=a.seed, n_events=a.batches * a.interval, window=a.window,
                         period=a.period)


def _workload(a, knobs) -> Workload:
    name, script = a.workload, None
    if name.startswith("dynamic:"):
        path = name.split(":", 1)[1]
        try:
            with open(path) as fh:
                script = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from None
        name = "dynamic"
    elif name not in WORKLOADS:
        raise ConfigError(f"unknown workload {name!r}")
    return make_workload(name, knobs, script)


def main(argv=None) -> int:
    ap = _parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        if a.batches < 1:
            raise ConfigError("--batches must be >= 1")
        knobs = _knobs(a)
        if a.cmd == "gen":
            wl = _workload(a, knobs)
            write_events(a.out, wl.events, {"workload": a.workload, **wl.knobs.header()})
            print(f"wrote {len(wl.events)} events to {a.out}")
            return EXIT_OK
        if a.input:
            events, header = read_events(a.input)
            name = header.get("workload", a.workload)
            wl = Workload(name, events, make_operator(knobs.key_space, knobs.udf_cost),
                          knobs.key_space, initial_value(name, knobs), knobs)
        else:
            wl = _workload(a, knobs)
        cfg = RunConfig(workload=wl.name, knobs=wl.knobs, threads=a.threads,
                        strategy=parse_strategy(a.strategy), speculate=a.speculate,
                        thresholds=a.thresholds, verify=a.verify, shuffle=a.shuffle)
        metrics, report, _ = run_benchmark(cfg, wl)
    except (ConfigError, WorkloadError, ValueError, OSError) as e:
        print(f"bench: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if a.trace:
        for line in metrics.trace:
            print(line)
    bd = " ".join(f"{k}={v:.4f}" for k, v in metrics.breakdown.items())
    print(f"events={metrics.events} wall={metrics.wall:.3f}s "
          f"throughput={metrics.throughput:.0f}/s p50={metrics.p50:.2f}ms "
          f"p99={metrics.p99:.2f}ms committed={metrics.committed} aborted={metrics.aborted} {bd}")
    if a.out:
        try:
            emit_report(metrics, "json" if a.out.endswith(".json") else "csv", a.out, cfg)
        except OSError as e:
            print(f"bench: cannot write report: {e}", file=sys.stderr)
            return EXIT_CONFIG
    if report is not None:
        print(report.text())
        if not report.ok:
            return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
