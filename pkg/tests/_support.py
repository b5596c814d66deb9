"""Helpers shared by the test modules.

The edge oracle here re-derives dependencies from the operations alone, with
an O(n^2) pairwise scan, so it never touches the planner's sorted lists.
"""

from __future__ import annotations

import random

from tpgstream import planner
from tpgstream.core import (Deterministic, FnKind, MultiKey, NonDeterministic, Operation,
                            OpKind, StateTransaction, UdfRegistry, WindowRange)
from tpgstream.executor import BatchExecutor, FsmState, LEGAL
from tpgstream.harness.oracle import OracleResult, serial_oracle, verify
from tpgstream.runtime import FAILED_MARKER, state_access
from tpgstream.state_store import VersionedStateTable

# one row per acceptance criterion, filled by test_acceptance and printed by conftest
ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str = ""):
    ACCEPTANCE[n] = (ok, detail)


# -- small hand-built batches ---------------------------------------------------------

def tiny_registry():
    reg = UdfRegistry()
    reg.register(FnKind.VALUE, lambda v, p: v[0] + p[0], "add")
    reg.register(FnKind.VALUE, lambda v, p: v[0] - p[0], "sub")
    reg.register(FnKind.VALUE, lambda v, p: sum(v) + p[0], "sum")
    reg.register(FnKind.CONDITION, lambda v, p: v[-1] >= p[0], "covers")
    reg.register(FnKind.CONDITION, lambda v, p: False, "never")
    reg.register(FnKind.WINDOW_AGG, lambda per_key, p: sum(sum(w) for w in per_key), "wsum")
    reg.register(FnKind.KEY_SELECTOR, lambda p, n: p[1], "pick")
    reg.register(FnKind.KEY_SELECTOR, lambda p, n: p[2], "pick_reads")
    reg.freeze()
    return reg


def op(ts, stmt, keys, fn=None, cond=None, params=(), kind=OpKind.WRITE):
    return Operation(ts * 64 + stmt, ts, stmt, kind, keys, fn, cond, params)


def deposit_transfer_txns(reg):
    """deposit(A,+10) at ts 1, transfer A->B 50 at ts 2, transfer B->A 30 at ts 3.

    Keys: A=0, B=1.  Op ids O1..O5 map to 64, 128, 129, 192, 193.
    """
    f = reg.by_name
    A, B = 0, 1
    t1 = StateTransaction(1, (op(1, 0, Deterministic(A), f("add"), params=(10,)),), 1)
    t2 = StateTransaction(2, (
        op(2, 0, Deterministic(A), f("sub"), f("covers"), (50,)),
        op(2, 1, MultiKey(B, (B, A)), f("add"), f("covers"), (50,))), 2)
    t3 = StateTransaction(3, (
        op(3, 0, Deterministic(B), f("sub"), f("covers"), (30,)),
        op(3, 1, MultiKey(A, (A, B)), f("add"), f("covers"), (30,))), 3)
    return [t1, t2, t3]


DT_IDS = {"O1": 64, "O2": 128, "O3": 129, "O4": 192, "O5": 193}


# -- brute-force dependency oracle ---------------------------------------------------

def _entries(o: Operation, n_keys):
    """{key: (is_source, is_real)} for the keys ``o`` touches."""
    ks = o.keys
    out = {}
    if isinstance(ks, Deterministic):
        out[ks.key] = (True, True)
    elif isinstance(ks, MultiKey):
        for k in ks.reads:
            out[k] = (False, False)
        out[ks.target] = (True, True)
    elif isinstance(ks, WindowRange):
        keys = ks.reads if ks.selector is None else (
            ks.candidates if ks.candidates is not None else range(n_keys))
        for k in keys:
            out[k] = (False, False)
        if ks.target is not None:
            out[ks.target] = (True, True)
    elif isinstance(ks, NonDeterministic):
        keys = ks.candidates if ks.candidates is not None else range(n_keys)
        for k in keys:
            out[k] = (o.kind == OpKind.WRITE, False)
    return out


def brute_force_edges(txns, n_keys):
    """TD/PD edges between op ids, reduced per key to the nearest source.

    A pair (a, b) from different transactions conflicts on key k when ``a``
    is a source on k (it writes k, may write k, or reads it directly) and
    ``b`` touches k at a later timestamp.  The pair survives reduction when
    no other source on k sits strictly between them: later than ``a`` in
    (ts, stmt) order and earlier than ``b``'s timestamp.  That intermediate
    source reaches ``b`` directly and is reached from ``a`` by a dependency
    or, inside one transaction, by the statement chain.
    """
    ops = [o for t in txns for o in t.ops]
    ent = [_entries(o, n_keys) for o in ops]
    edges = {}
    for j, b in enumerate(ops):
        for k, (_, b_real) in ent[j].items():
            for i, a in enumerate(ops):
                e = ent[i].get(k)
                if e is None or not e[0] or a.txn_ts >= b.txn_ts:
                    continue
                shadowed = False
                for c_i, c in enumerate(ops):
                    ce = ent[c_i].get(k)
                    if ce is None or not ce[0] or c_i == i:
                        continue
                    if (c.txn_ts, c.stmt_idx) > (a.txn_ts, a.stmt_idx) and c.txn_ts < b.txn_ts:
                        shadowed = True
                        break
                if shadowed:
                    continue
                cls = planner.TD if b_real else planner.PD
                old = edges.get((a.op_id, b.op_id))
                if old is None or (old == planner.PD and cls == planner.TD):
                    edges[(a.op_id, b.op_id)] = cls
    return {(a, b, c) for (a, b), c in edges.items()}


def planner_edges(tpg):
    return {(a, b, c) for a, b, c in tpg.edges((planner.TD, planner.PD))}


def random_batch(rng: random.Random, reg, n_keys=8, max_ops=200):
    """Random mixed transactions, at most ``max_ops`` operations in total."""
    f = reg.by_name
    txns, n_ops, ts = [], 0, 0
    while True:
        ts += rng.randint(1, 3)
        n = rng.randint(1, 4)
        if n_ops + n > max_ops:
            break
        ops, written = [], set()
        for s in range(n):
            r = rng.random()
            free = [k for k in range(n_keys) if k not in written]
            if r < 0.3 and free:
                k = rng.choice(free)
                written.add(k)
                o = op(ts, s, Deterministic(k), f("add"), params=(1,))
            elif r < 0.5 and free:
                k = rng.choice(free)
                written.add(k)
                reads = tuple(rng.sample(range(n_keys), rng.randint(1, min(3, n_keys))))
                o = op(ts, s, MultiKey(k, reads), f("sum"), params=(1,))
            elif r < 0.6:
                o = op(ts, s, Deterministic(rng.randrange(n_keys)), kind=OpKind.READ)
            elif r < 0.75:
                keys = tuple(rng.sample(range(n_keys), rng.randint(1, min(3, n_keys))))
                o = op(ts, s, WindowRange(rng.randint(1, 10), ts, keys), f("wsum"),
                       kind=OpKind.READ)
            else:
                cands = tuple(rng.sample(range(n_keys), rng.randint(1, min(4, n_keys))))
                kind = OpKind.WRITE if rng.random() < 0.7 else OpKind.READ
                o = op(ts, s, NonDeterministic(f("pick"), None, cands),
                       f("add") if kind == OpKind.WRITE else None, params=(1, cands[0]),
                       kind=kind)
            ops.append(o)
        txns.append(StateTransaction(ts, tuple(ops), ts))
        n_ops += n
    return txns


# -- building and running single batches ------------------------------------------------

def build_tpg(workload, events=None):
    """Graph for one batch of ``workload`` (events default to all of them)."""
    events = workload.events if events is None else events
    tpg = planner.TPG(workload.n_keys)
    op_ = workload.operator
    for e in events:
        eb = op_.pre_process(e)
        txn = state_access(op_, eb, e.ts, workload.n_keys, e.group)
        if txn is not None:
            planner.phase1_insert(tpg, txn)
    planner.phase2_refine(tpg)
    return tpg


def fresh_table(workload):
    return VersionedStateTable(workload.n_keys, workload.initial)


def executor_result(tpg, table, res, events) -> OracleResult:
    """Shape one executed batch like an oracle result."""
    out = OracleResult(table.snapshot())
    done = {}
    for i, txn in enumerate(tpg.txns):
        eid = txn.event_id
        if res.committed[i]:
            out.committed.add(eid)
            done[eid] = tuple(res.records[v].output for v in tpg.txn_vids[i])
        else:
            out.failed.add(eid)
            done[eid] = FAILED_MARKER
    for e in events:
        if e.event_id not in done:     # filtered events commit with no output
            out.committed.add(e.event_id)
        else:
            out.outputs[e.event_id] = done[e.event_id]
    return out


def audit_transitions(log, verts):
    """Problems with a transition log: illegal moves or non-terminal vertices."""
    bad = []
    for op_id, a, b, label, _ in log:
        if label not in LEGAL.get((a, b), ()):
            bad.append(f"op {op_id}: {a.name}->{b.name} labelled {label}")
    for v in verts:
        if v.fsm not in (FsmState.EXE, FsmState.ABT):
            bad.append(f"{v!r} ended in {v.fsm.name}")
    return bad


class SpyTable(VersionedStateTable):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.truncations = []

    def truncate_after(self, key, aborted_ts):
        removed = super().truncate_after(key, aborted_ts)
        self.truncations.append((key, aborted_ts, [v.ts for v in removed]))
        return removed


def check_grid_case(workload, combos):
    """Run one single-batch workload under each (decision, threads) combo.

    The graph and the oracle are built once; every run gets a fresh table
    (the executor resets all vertex state in setup).  Returns a list of
    failure strings, empty when every run matched and every transition log
    was legal.
    """
    oracle = serial_oracle(workload.stream(), workload.operator, workload.n_keys,
                           workload.initial)
    tpg = build_tpg(workload)
    fails = []
    for dec, threads in combos:
        table = fresh_table(workload)
        tag = f"{workload.name} seed={workload.knobs.seed} {dec.short()}/{dec.explore_variant} x{threads}"
        ex = BatchExecutor(tpg, table, workload.operator.registry, dec, threads,
                           log_transitions=True)
        try:
            res = ex.run()
        except Exception as e:
            fails.append(f"{tag}: {type(e).__name__}: {e}")
            continue
        table.gc_batch()
        rep = verify(executor_result(tpg, table, res, workload.events), oracle)
        if not rep.ok:
            fails.append(f"{tag}: {rep.diffs[0]}")
        bad = audit_transitions(res.transitions, tpg.vertices)
        if bad:
            fails.append(f"{tag}: fsm {bad[0]}")
    return fails
