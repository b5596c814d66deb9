"""Acceptance suite: one test per criterion, one summary line each.

The lines are printed by the terminal-summary hook in conftest.py.
Criterion 8 is directional and report-only: it warns instead of failing.
"""

import itertools
import random
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from tpgstream import planner
from tpgstream.core import Deterministic, MultiKey, NonDeterministic, StateTransaction
from tpgstream.executor import BatchExecutor, FsmState, run_batch
from tpgstream.harness import RunConfig, run_benchmark, serial_oracle, verify
from tpgstream.runtime import FAILED_MARKER, Engine, EngineConfig
from tpgstream.scheduler import (ALL_DECISIONS, BFS, COARSE, DFS, EAGER, FINE, LAZY, NS, S,
                                 DecisionThresholds, SchedulingDecision, TPGProperties, decide,
                                 decide_nested)
from tpgstream.state_store import VersionedStateTable
from tpgstream.workloads import WORKLOADS, WorkloadKnobs, make_rng, make_workload, shuffle_arrival

from _support import (SpyTable, audit_transitions, brute_force_edges, build_tpg, check_grid_case,
                      executor_result, op, planner_edges, random_batch, record, tiny_registry)

GRID_SEEDS = (1, 2, 3, 4, 5)
GRID_KNOBS = list(itertools.product((0.0, 0.6), (0.0, 0.3), (1, 2)))
GRID_THREADS = (1, 2, 4, 8)
GRID_BUDGET_S = 15 * 60

# transition-log problems seen by any acceptance run; criterion 9 reads it
FSM_PROBLEMS: list = []
FSM_RUNS = [0]


def grid_combos():
    """8 decisions x 4 thread counts; structured runs alternate BFS and DFS."""
    out = []
    for d in ALL_DECISIONS:
        for i, t in enumerate(GRID_THREADS):
            v = BFS if i % 2 == 0 else DFS
            out.append((replace(d, explore_variant=v) if d.explore == S else d, t))
    return out


def _say(n, ok, detail):
    record(n, ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# -- 1 + 9: serializability grid ------------------------------------------------------

def test_c1_serializability_grid():
    t0 = time.perf_counter()
    combos = grid_combos()
    fails, cells = [], 0
    for wl_name in WORKLOADS:
        for seed in GRID_SEEDS:
            for theta, a, r in GRID_KNOBS:
                knobs = WorkloadKnobs(theta=theta, abort_ratio=a, multi_access=r, udf_cost=0.0,
                                      interval=2048, n_events=2048, key_space=1024, seed=seed)
                wl = make_workload(wl_name, knobs)
                got = check_grid_case(wl, combos)
                FSM_RUNS[0] += len(combos)
                FSM_PROBLEMS.extend(f for f in got if ": fsm " in f)
                fails.extend(got)
                cells += 1
    elapsed = time.perf_counter() - t0
    runs = cells * len(combos)
    ok = not fails and elapsed < GRID_BUDGET_S
    _say(1, ok, f"{runs} runs over {cells} cells, {len(fails)} divergences, "
                f"{elapsed:.0f}s (budget {GRID_BUDGET_S}s)")
    assert not fails, fails[:5]
    assert elapsed < GRID_BUDGET_S, f"grid took {elapsed:.0f}s"


def test_c1_engine_path_matches_oracle():
    """The full runtime (ingest, punctuate, decide, execute) on multi-batch streams."""
    fails = []
    for i, wl_name in enumerate(WORKLOADS):
        for j, dec in enumerate(("auto",) + ALL_DECISIONS):
            knobs = WorkloadKnobs(theta=0.6, abort_ratio=0.3, multi_access=2, udf_cost=0.0,
                                  interval=512, n_events=1024, key_space=256, seed=10 * i + j)
            cfg = RunConfig(wl_name, knobs, threads=1 + j % 4, strategy=dec, verify=True,
                            log_transitions=True)
            _, rep, eng = run_benchmark(cfg)
            if not rep.ok:
                fails.append(f"{wl_name} {dec}: {rep.diffs[:2]}")
            for b in eng.batches:
                FSM_RUNS[0] += 1
                FSM_PROBLEMS.extend(_log_problems(b.transitions))
    assert not fails, fails[:5]


def _log_problems(log):
    from tpgstream.executor import LEGAL
    last = {}
    bad = []
    for op_id, a, b, label, _ in log:
        if label not in LEGAL.get((a, b), ()):
            bad.append(f"op {op_id}: {a.name}->{b.name} {label}")
        last[op_id] = b
    bad.extend(f"op {o} ended {s.name}" for o, s in last.items()
               if s not in (FsmState.EXE, FsmState.ABT))
    return bad


def test_c9_fsm_legality():
    if FSM_RUNS[0] == 0:
        # the grid was deselected; audit a reduced one
        for wl_name in WORKLOADS:
            wl = make_workload(wl_name, WorkloadKnobs(theta=0.6, abort_ratio=0.3, udf_cost=0,
                                                      interval=512, n_events=512, key_space=128))
            got = check_grid_case(wl, grid_combos())
            FSM_RUNS[0] += len(grid_combos())
            FSM_PROBLEMS.extend(f for f in got if ": fsm " in f)
    ok = not FSM_PROBLEMS
    _say(9, ok, f"{FSM_RUNS[0]} batch logs audited, {len(FSM_PROBLEMS)} problems")
    assert ok, FSM_PROBLEMS[:5]


# -- 2: planner equivalence ------------------------------------------------------------------

def test_c2_planner_matches_brute_force():
    t0 = time.perf_counter()
    reg = tiny_registry()
    bad = []
    sizes = []
    for seed in range(200):
        rng = random.Random(seed)
        n_keys = rng.randint(2, 12)
        txns = random_batch(rng, reg, n_keys, rng.randint(1, 200))
        sizes.append(sum(len(t.ops) for t in txns))
        if not txns:
            continue
        order = list(txns)
        rng.shuffle(order)
        if planner_edges(planner.build(order, n_keys)) != brute_force_edges(txns, n_keys):
            bad.append(seed)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 60 and max(sizes) <= 200
    _say(2, ok, f"200 batches (max {max(sizes)} ops), {len(bad)} mismatches, {elapsed:.1f}s")
    assert not bad, bad[:10]
    assert elapsed < 60


# -- 3: out-of-order arrival -----------------------------------------------------------------

def test_c3_shuffled_arrival():
    bad = []
    for seed in range(50):
        wl_name = WORKLOADS[seed % len(WORKLOADS)]
        knobs = WorkloadKnobs(theta=0.6, abort_ratio=0.3, udf_cost=0.0, interval=256,
                              n_events=768, key_space=128, seed=seed, period=50, window=100)
        wl = make_workload(wl_name, knobs)
        ordered = wl.stream()
        oracle = serial_oracle(ordered, wl.operator, wl.n_keys, wl.initial)
        shuffled = shuffle_arrival(ordered, 256, make_rng(1000 + seed))
        arrival = [e.ts for e in shuffled if hasattr(e, "etype")]
        assert arrival != sorted(arrival)
        eng = Engine(wl.operator, wl.n_keys, wl.initial,
                     EngineConfig(n_threads=1 + seed % 4, log_transitions=True))
        eng.run(shuffled)
        rep = verify(eng, oracle)
        if not rep.ok:
            bad.append((seed, rep.diffs[:2]))
        for b in eng.batches:
            FSM_RUNS[0] += 1
            FSM_PROBLEMS.extend(_log_problems(b.transitions))
    _say(3, not bad, f"50 shuffled streams, {len(bad)} diverged from in-order oracle")
    assert not bad, bad[:3]


# -- 4: abort atomicity and rollback ---------------------------------------------------------

MUTATIONS = ("skip_ld_closure", "skip_truncation", "skip_cascade")


def _redo_batch(reg):
    f = reg.by_name
    o1 = op(1, 0, Deterministic(0), f("add"), f("never"), (1,))
    o2 = op(1, 1, Deterministic(1), f("add"), None, (5,))
    o3 = op(2, 0, MultiKey(2, (2, 1)), f("sum"), None, (0,))
    tpg = planner.build([StateTransaction(1, (o1, o2)), StateTransaction(2, (o3,))], 3)
    return tpg, [tpg.vertex(o.op_id) for o in (o1, o2, o3)]


def test_c4_abort_atomicity_and_rollback():
    problems = []
    knobs = WorkloadKnobs(theta=0.6, abort_ratio=0.3, multi_access=2, txn_len=3, udf_cost=0.0,
                          interval=512, n_events=1024, key_space=256, seed=3)
    strategies = ("S/F/E", "BFS/F/L", "NS/F/E", "NS/C/L", "S/C/E")
    caught = {m: 0 for m in MUTATIONS}
    for s in strategies:
        dec = SchedulingDecision.parse(s)
        _, rep, _ = run_benchmark(RunConfig("gs", knobs, threads=2, strategy=dec, verify=True))
        if not rep.ok:
            problems.append(f"unmutated {s} failed verify")
        for m in MUTATIONS:
            _, rep, _ = run_benchmark(RunConfig("gs", knobs, threads=2, strategy=dec,
                                                verify=True, mutations=(m,)))
            if rep.ok:
                problems.append(f"{m} under {s} went unnoticed")
            else:
                caught[m] += 1

    # dependent-op redo: O1 fails, O2 shares its txn, O3 read O2's write
    reg = tiny_registry()
    tpg, (v1, v2, v3) = _redo_batch(reg)
    ex = BatchExecutor(tpg, VersionedStateTable(3, 10), reg,
                       SchedulingDecision(S, FINE, LAZY, BFS), log_transitions=True)
    ex.prepare()
    ex.execute(v2)
    ex.execute(v3)
    ex.execute(v1)
    ex.fail(v1)
    if [v.fsm for v in (v1, v2, v3)] != [FsmState.ABT, FsmState.ABT, FsmState.RDY]:
        problems.append("replay: wrong states after the abort")
    ex.execute(v3)
    ex.sweep()
    if ex.exec_count[v3.vid] != 2:
        problems.append(f"replay: O3 ran {ex.exec_count[v3.vid]} times")
    redo_counts = []
    for d in ALL_DECISIONS:
        if d.abort != LAZY:
            continue
        for threads in (1, 2):
            tpg, (_, _, v3) = _redo_batch(reg)
            table = VersionedStateTable(3, 10)
            res = run_batch(tpg, table, reg, d, threads)
            redo_counts.append(res.exec_count[v3.vid])
            if table.snapshot() != [10, 10, 20]:
                problems.append(f"redo batch {d.short()} x{threads}: {table.snapshot()}")
    if set(redo_counts) != {2}:
        problems.append(f"lazy runs redo O3 {redo_counts} times")
    _say(4, not problems, f"mutations caught {caught} of {len(strategies)} each; "
                          f"O3 executions per lazy run {sorted(set(redo_counts))}")
    assert not problems, problems


# -- 5: windows ---------------------------------------------------------------------------

def _window_from_history(events, outputs):
    """Recompute every window output from the committed writes the engine reported."""
    hist = {}
    expect = {}
    for e in sorted(events, key=lambda e: e.ts):
        if e.etype == "gs":
            out = outputs[e.event_id]
            if out == FAILED_MARKER:
                continue
            l, r = e.args[2], e.args[3]
            body = e.args[4:]
            for i in range(l):
                hist.setdefault(body[i * r], []).append((e.ts, out[i]))
        elif e.etype == "gsw":
            size, n = e.args[:2]
            lo, hi = e.ts - size, e.ts
            total = 0
            for k in e.args[2:2 + n]:
                # the initial value 0 sits at ts 0; it counts when the window reaches it
                total += sum(v for ts, v in hist.get(k, ()) if lo <= ts < hi)
            expect[e.event_id] = (total,)
    return expect


def test_c5_window_correctness():
    bad = []
    n = 12_288
    for size, period in itertools.product((1000, 10_000), (100, 1000)):
        knobs = WorkloadKnobs(theta=0.6, abort_ratio=0.1, multi_access=2, udf_cost=0.0,
                              interval=n, n_events=n, key_space=1024, seed=size + period,
                              window=size, period=period, window_keys=100)
        wl = make_workload("gs-window", knobs)
        _, rep, eng = run_benchmark(RunConfig("gs-window", knobs, threads=2, verify=True))
        outs = dict(eng.outputs)
        expect = _window_from_history(wl.events, outs)
        wrong = [eid for eid, v in expect.items() if outs[eid] != v]
        if not rep.ok or wrong or not expect:
            bad.append((size, period, rep.n_diffs, wrong[:3]))
    _say(5, not bad, f"4 window/period settings, {len(bad)} with mismatches")
    assert not bad, bad


# -- 6: non-deterministic rollback ---------------------------------------------------------

class _DropAudit(BatchExecutor):
    """Checks every version drop against the op's resolved keys."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.drops = []

    def _drop_versions(self, v, seeds):
        rec = v.record
        before = len(self.table.truncations)
        written = [k for k, _ in rec.written_versions]
        super()._drop_versions(v, seeds)
        touched = [k for k, _, _ in self.table.truncations[before:]]
        self.drops.append((v, tuple(rec.resolved_keys), written, touched))


def test_c6_nondet_rollback():
    bad = []
    n_nd_drops = 0
    decisions = [replace(d, explore_variant=v) for d in ALL_DECISIONS for v in (BFS, DFS)
                 if d.explore == S or v == DFS]
    for seed in range(100):
        rng = random.Random(seed)
        knobs = WorkloadKnobs(theta=rng.choice((0.0, 0.6, 0.9)), abort_ratio=rng.uniform(0.2, 0.5),
                              multi_access=rng.randint(1, 3), udf_cost=0.0, interval=200,
                              n_events=200, key_space=rng.choice((16, 64)), seed=seed,
                              candidates=rng.randint(2, 8), nondet_ratio=rng.uniform(0.5, 1.0))
        wl = make_workload("gs-nondet", knobs)
        oracle = serial_oracle(wl.stream(), wl.operator, wl.n_keys, wl.initial)
        tpg = build_tpg(wl)
        table = SpyTable(wl.n_keys, wl.initial)
        dec = decisions[seed % len(decisions)]
        ex = _DropAudit(tpg, table, wl.operator.registry, dec, rng.randint(1, 4))
        res = ex.run()
        table.gc_batch()
        rep = verify(executor_result(tpg, table, res, wl.events), oracle)
        if not rep.ok:
            bad.append((seed, dec.short(), rep.diffs[:2]))
        # every truncation happened inside a drop, on a key the op resolved and wrote
        if sum(len(d[3]) for d in ex.drops) != len(table.truncations):
            bad.append((seed, "truncation outside a version drop"))
        for v, resolved, written, touched in ex.drops:
            if touched != written or not set(touched) <= set(resolved):
                bad.append((seed, v.op.op_id, resolved, touched))
            elif isinstance(v.op.keys, NonDeterministic) and touched:
                # a non-deterministic write only ever lands on the key it resolved
                n_nd_drops += 1
                if touched != [resolved[0]]:
                    bad.append((seed, v.op.op_id, resolved, touched))
    ok = not bad and n_nd_drops > 0
    _say(6, ok, f"100 batches, {n_nd_drops} non-deterministic version drops audited, "
                f"{len(bad)} problems")
    assert ok, bad[:5]


# -- 7: decision model ----------------------------------------------------------------------

def test_c7_decision_model():
    th = DecisionThresholds(dep_count_high=1000, skew_low=8, pd_low=200, complexity_low=20,
                            abort_high=0.3)
    # a profile that sits on the S/COARSE/LAZY side of every rule
    base = TPGProperties(avg_complexity=5, degree_skew=2, abort_ratio=0.5, n_ld=200,
                         n_td=1200, n_pd=100, has_cycles_coarse=False)
    d0 = decide(base, th)
    checks = []

    def chk(name, props, field, expect):
        got = getattr(decide(props, th), field)
        checks.append((name, got == expect, got, expect))

    deps = base.n_ld + base.n_td + base.n_pd
    assert deps >= th.dep_count_high
    # 1. total dependency count vs dep_count_high (explore)
    chk("deps at threshold", replace(base, n_ld=0, n_pd=0, n_td=1000), "explore", S)
    chk("deps below", replace(base, n_ld=0, n_pd=0, n_td=999), "explore", NS)
    # 2. degree skew vs skew_low (explore)
    chk("skew at threshold", replace(base, degree_skew=8), "explore", S)
    chk("skew above", replace(base, degree_skew=8.01), "explore", NS)
    # 3. TD count vs dep_count_high (granularity)
    chk("td at threshold", replace(base, n_td=1000), "granularity", COARSE)
    chk("td below", replace(base, n_td=999), "granularity", FINE)
    # 4. PD count vs pd_low (granularity)
    chk("pd at threshold", replace(base, n_pd=200), "granularity", COARSE)
    chk("pd above", replace(base, n_pd=201), "granularity", FINE)
    # 5. complexity vs complexity_low (abort)
    chk("cost at threshold", replace(base, avg_complexity=20), "abort", LAZY)
    chk("cost above", replace(base, avg_complexity=20.5), "abort", EAGER)
    # 6. abort ratio vs abort_high (abort)
    chk("abort at threshold", replace(base, abort_ratio=0.3), "abort", LAZY)
    chk("abort below", replace(base, abort_ratio=0.29), "abort", EAGER)
    # cyclic chains always force fine units
    cyc_ok = decide(replace(base, has_cycles_coarse=True), th).granularity == FINE

    # skewed, abort-heavy group vs uniform, abort-free group
    g1 = TPGProperties(avg_complexity=0, degree_skew=40, abort_ratio=0.5, n_ld=2000,
                       n_td=5000, n_pd=0)
    g2 = TPGProperties(avg_complexity=0, degree_skew=1.2, abort_ratio=0.0, n_ld=2000,
                       n_td=5000, n_pd=0)
    nested = decide_nested({1: g1, 2: g2}, th)
    nested_ok = (nested[1].short(), nested[2].short()) == ("NS/C/L", "S/C/E")
    n_ok = sum(c[1] for c in checks)
    ok = n_ok == 12 and nested_ok and cyc_ok and d0.short() == "S/C/L"
    _say(7, ok, f"{n_ok}/12 boundary assertions, nested split "
                f"{nested[1].short()} | {nested[2].short()}")
    assert [c for c in checks if not c[1]] == []
    assert nested_ok and cyc_ok


# -- 8: directional performance (report-only) ---------------------------------------------------

def _tput(cfg, runs=5):
    out = []
    for _ in range(runs):
        m, _, _ = run_benchmark(cfg)
        out.append(m.throughput)
    return np.array(out)


def _direction(name, hi, lo, factor=1.0):
    """One-sided Welch test that mean(hi) > factor * mean(lo) at 95%."""
    if np.allclose(hi, hi[0]) and np.allclose(lo, lo[0]):
        p = 0.0 if hi[0] > factor * lo[0] else 1.0
    else:
        p = stats.ttest_ind(hi, factor * lo, equal_var=False, alternative="greater").pvalue
    ok = p < 0.05
    line = (f"{name}: {np.mean(hi):.0f} vs {factor:g}x{np.mean(lo):.0f} ev/s, "
            f"p={p:.3f} {'OK' if ok else 'WARN'}")
    if not ok:
        warnings.warn(f"directional check not confirmed: {line}")
    print(line)
    return ok, line


def test_c8_directional_performance():
    results = []
    gs = WorkloadKnobs(theta=0.0, abort_ratio=0.0, multi_access=1, udf_cost=10.0,
                       interval=2048, n_events=2048, key_space=10240, seed=1)
    sfe = SchedulingDecision.parse("S/F/E")
    results.append(_direction(
        "a) 8 threads >= 2x 1 thread",
        _tput(RunConfig("gs", gs, threads=8, strategy=sfe)),
        _tput(RunConfig("gs", gs, threads=1, strategy=sfe)), 2.0))
    hot = WorkloadKnobs(theta=0.6, abort_ratio=0.9, multi_access=2, udf_cost=0.0,
                        interval=2048, n_events=2048, key_space=1024, seed=2)
    results.append(_direction(
        "b) lazy >= eager at a=0.9, C=0",
        _tput(RunConfig("gs", hot, threads=4, strategy=SchedulingDecision.parse("S/F/L"))),
        _tput(RunConfig("gs", hot, threads=4, strategy=sfe))))
    calm = hot.with_(abort_ratio=0.1, udf_cost=100.0, n_events=1024, interval=1024)
    results.append(_direction(
        "c) eager >= lazy at a=0.1, C=100us",
        _tput(RunConfig("gs", calm, threads=4, strategy=sfe)),
        _tput(RunConfig("gs", calm, threads=4, strategy=SchedulingDecision.parse("S/F/L")))))
    big = WorkloadKnobs(theta=0.6, abort_ratio=0.0, multi_access=1, udf_cost=0.0,
                        interval=10240, n_events=10240, key_space=1024, seed=3)
    results.append(_direction(
        "d) coarse >= fine at high T, r=1",
        _tput(RunConfig("gs", big, threads=4, strategy=SchedulingDecision.parse("S/C/E"))),
        _tput(RunConfig("gs", big, threads=4, strategy=sfe))))
    win = WorkloadKnobs(theta=0.2, abort_ratio=0.0, multi_access=2, udf_cost=0.0,
                        interval=10240, n_events=10240, key_space=1024, seed=4, period=100,
                        window_keys=100)
    results.append(_direction(
        "e) window 1k faster than 100k",
        _tput(RunConfig("gs-window", win.with_(window=1000), threads=4, strategy=sfe)),
        _tput(RunConfig("gs-window", win.with_(window=100_000), threads=4, strategy=sfe))))
    confirmed = sum(ok for ok, _ in results)
    detail = "; ".join(("OK " if ok else "WARN ") + line.split(":")[0] for ok, line in results)
    _say(8, True, f"report-only, {confirmed}/5 directions confirmed at 95%: {detail}")
