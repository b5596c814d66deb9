"""Sweep workload knobs and print decision thresholds at the observed crossovers.

    python3 benchmarks/calibrate_thresholds.py [--runs 3] [--threads 4] > thresholds.conf

Each rule is calibrated on its own, holding the other dimensions fixed:

  abort_high      smallest abort ratio where LAZY beats EAGER (C=0)
  complexity_low  largest UDF cost where LAZY still beats EAGER (a=0.5)
  skew_low        degree skew at which NS overtakes S (theta sweep)
  dep_count_high  dependency count from which S beats NS (T sweep, uniform keys)
  pd_low          PD count up to which COARSE beats FINE (multi-access sweep)

When a sweep never crosses, the end of the sweep is reported and marked.
"""

import argparse
import statistics
import sys

from tpgstream import planner
from tpgstream.harness import RunConfig, run_benchmark
from tpgstream.runtime import state_access
from tpgstream.scheduler import DecisionThresholds, SchedulingDecision, measure_properties
from tpgstream.workloads import WorkloadKnobs, make_workload


def tput(knobs, strategy, threads, runs):
    d = SchedulingDecision.parse(strategy)
    return statistics.median(run_benchmark(RunConfig("gs", knobs, threads=threads, strategy=d))[0]
                             .throughput for _ in range(runs))


def props(knobs, abort=0.0):
    wl = make_workload("gs", knobs)
    tpg = planner.TPG(wl.n_keys)
    for e in wl.events[:knobs.interval]:
        txn = state_access(wl.operator, wl.operator.pre_process(e), e.ts, wl.n_keys, e.group)
        if txn is not None:
            planner.phase1_insert(tpg, txn)
    planner.phase2_refine(tpg)
    return measure_properties(tpg, abort, wl.operator.registry)


def log(msg):
    print(msg, file=sys.stderr)


def crossover(points, prefer_first):
    """First sweep value where the preference flips; None if it never does."""
    for x, a, b in points:
        if (a >= b) == prefer_first:
            return x
    return None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--events", type=int, default=2048)
    a = ap.parse_args(argv)
    base = WorkloadKnobs(theta=0.6, abort_ratio=0.0, multi_access=2, udf_cost=0.0,
                         interval=a.events, n_events=a.events, key_space=1024, seed=7)
    run = lambda k, s: tput(k, s, a.threads, a.runs)  # noqa: E731
    notes = []

    pts = []
    for ab in (0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9):
        k = base.with_(abort_ratio=ab)
        pts.append((ab, run(k, "S/F/L"), run(k, "S/F/E")))
        log(f"abort {ab}: lazy {pts[-1][1]:.0f} eager {pts[-1][2]:.0f}")
    abort_high = crossover(pts, True)
    if abort_high is None:
        abort_high, _ = 0.9, notes.append("abort_high: lazy never won")

    pts = []
    for c in (0, 5, 10, 20, 50, 100):
        k = base.with_(abort_ratio=0.5, udf_cost=float(c))
        pts.append((c, run(k, "S/F/E"), run(k, "S/F/L")))
        log(f"cost {c}: eager {pts[-1][1]:.0f} lazy {pts[-1][2]:.0f}")
    first_eager = crossover(pts, True)
    prev = [x for x, _, _ in pts if first_eager is None or x < first_eager]
    complexity_low = prev[-1] if prev else 0
    if first_eager is None:
        notes.append("complexity_low: eager never won")

    pts = []
    for th in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        k = base.with_(theta=th)
        skew = props(k).degree_skew
        pts.append((skew, run(k, "NS/F/E"), run(k, "S/F/E")))
        log(f"theta {th} skew {skew:.2f}: ns {pts[-1][1]:.0f} s {pts[-1][2]:.0f}")
    skew_low = crossover(pts, True)
    if skew_low is None:
        skew_low, _ = max(p[0] for p in pts), notes.append("skew_low: NS never won")

    pts = []
    for t in (128, 256, 512, 1024, 2048, 4096):
        k = base.with_(theta=0.0, interval=t, n_events=t)
        p = props(k)
        deps = p.n_td + p.n_pd + p.n_ld
        pts.append((deps, run(k, "S/F/E"), run(k, "NS/F/E")))
        log(f"T {t} deps {deps}: s {pts[-1][1]:.0f} ns {pts[-1][2]:.0f}")
    dep_count_high = crossover(pts, True)
    if dep_count_high is None:
        dep_count_high, _ = pts[-1][0], notes.append("dep_count_high: S never won")

    pts = []
    for r in (1, 2, 3, 4, 6):
        k = base.with_(theta=0.0, multi_access=r)
        pd = props(k).n_pd
        pts.append((pd, run(k, "S/F/E"), run(k, "S/C/E")))
        log(f"r {r} pd {pd}: fine {pts[-1][1]:.0f} coarse {pts[-1][2]:.0f}")
    first_fine = crossover(pts, True)
    prev = [x for x, _, _ in pts if first_fine is None or x < first_fine]
    pd_low = prev[-1] if prev else 0

    th = DecisionThresholds(dep_count_high=float(dep_count_high), skew_low=round(skew_low, 2),
                            pd_low=float(pd_low), complexity_low=float(complexity_low),
                            abort_high=float(abort_high))
    print(f"# decision thresholds from benchmarks/calibrate_thresholds.py "
          f"(threads={a.threads}, T={a.events}, runs={a.runs})")
    for n in notes:
        print(f"# {n}")
    print(th.to_text(), end="")


if __name__ == "__main__":
    main()
