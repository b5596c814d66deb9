"""Batch executor for a refined TPG.

Vertex states follow a four-state machine (BLK, RDY, EXE, ABT).  Worker
threads pull scheduling units from a per-group driver (BFS, DFS or NS),
evaluate UDFs outside the engine lock, and commit results under it.

Correctness rests on three rules:

* A vertex runs only when every TD/PD parent is *settled*: EXE, or ABT with
  all of its own parents settled.  Reads then see exactly the versions the
  serial order would.
* A failed condition does not abort on the spot.  The op commits as EXE with
  a failure marker; the transaction is aborted only once the failure is
  *confirmed* (all parents belong to decided transactions), so a decision is
  never taken on data that may still be rolled back.  Eager mode confirms as
  early as possible, lazy mode waits until the graph is fully explored.
* Aborting a transaction truncates its versions and rolls back the forward
  closure of affected vertices (T5/T6), processed in timestamp order.
"""

from __future__ import annotations

import enum
import heapq
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from . import kernels
from .core import Deterministic, MultiKey, NonDeterministic, OpKind, WindowRange
from .planner import TPG, stratify
from .scheduler import (BFS, DFS, EAGER, FINE, LAZY, NS, S, SchedulingDecision, assign,
                        detect_cycles, form_units, inter_unit_edges, unit_ranks)
from .state_store import DuplicateVersion, VersionedStateTable

perf = time.perf_counter


class ExecutorError(Exception):
    pass


class DeadlockError(ExecutorError):
    pass


class LivelockError(ExecutorError):
    pass


class IllegalTransition(ExecutorError):
    pass


class NotReady(ExecutorError):
    pass


class FsmState(enum.IntEnum):
    BLK = 0
    RDY = 1
    EXE = 2
    ABT = 3


BLK, RDY, EXE, ABT = FsmState.BLK, FsmState.RDY, FsmState.EXE, FsmState.ABT

LEGAL = {
    (BLK, RDY): ("T1", "T5"),
    (RDY, EXE): ("T2",),
    (BLK, EXE): ("T3",),
    (BLK, ABT): ("T4",),
    (RDY, ABT): ("T4",),
    (EXE, ABT): ("T4",),
    (EXE, RDY): ("T5",),
    (EXE, BLK): ("T6",),
    (RDY, BLK): ("T6",),
}

PENDING, COMMITTED, ABORTED = 0, 1, 2


class _Failed:
    __slots__ = ()

    def __repr__(self):
        return "failed state access"


FAILED = _Failed()


@dataclass
class ExecRecord:
    op_id: int
    resolved_keys: tuple = ()
    written_versions: list = field(default_factory=list)
    output: object = None
    failed: bool = False
    write: Optional[tuple] = None
    useful: float = 0.0


@dataclass
class Timers:
    useful: float = 0.0
    sync: float = 0.0
    lock: float = 0.0
    explore: float = 0.0
    abort: float = 0.0

    def add(self, other: "Timers"):
        self.useful += other.useful
        self.sync += other.sync
        self.lock += other.lock
        self.explore += other.explore
        self.abort += other.abort

    def as_dict(self):
        return {"useful": self.useful, "sync": self.sync, "lock": self.lock,
                "explore": self.explore, "abort": self.abort}


@dataclass
class BatchResult:
    committed: list          # per tpg txn index
    records: list            # per vertex id (None for ABT vertices)
    timers: Timers
    per_thread: list
    transitions: Optional[list]
    exec_count: list
    sweeps: int
    decisions: dict


class _Txn:
    __slots__ = ("idx", "pos", "ts", "vids", "n_exec", "n_failed", "status", "group", "coord")

    def __init__(self, idx, ts, vids, group):
        self.idx = idx
        self.pos = -1
        self.ts = ts
        self.vids = vids
        self.n_exec = 0
        self.n_failed = 0
        self.status = PENDING
        self.group = group
        self.coord = -1


class _Worker:
    __slots__ = ("idx", "cond", "holder", "notices", "pending", "drivers", "t")

    def __init__(self, idx, lock):
        self.idx = idx
        self.cond = threading.Condition(lock)
        self.holder = deque()     # (child vid, child cgen) "parent settled" signals
        self.notices = []         # txn indices to check for abort (NS coordinator role)
        self.pending = True
        self.drivers = []
        self.t = Timers()


# -- drivers ---------------------------------------------------------------------

class _FnCache:
    """Memoized registry lookups; the registry is write-once."""

    __slots__ = ("_reg", "_bodies", "_costs")

    def __init__(self, reg):
        self._reg = reg
        self._bodies = {}
        self._costs = {}

    def resolve(self, ref):
        fn = self._bodies.get(ref)
        if fn is None:
            fn = self._bodies[ref] = self._reg.resolve(ref)
        return fn

    def cost(self, ref):
        c = self._costs.get(ref)
        if c is None:
            c = self._costs[ref] = self._reg.cost_us(ref)
        return c


class _Driver:
    deferred = False

    def __init__(self, ex, decision, units, workers, speculate):
        self.ex = ex
        self.decision = decision
        self.units = units
        self.workers = workers
        self.speculate = speculate

    def wake_all(self):
        for w in self.workers:
            self.ex._wake(w)


class _NSDriver(_Driver):
    """Each worker owns a pool of units and runs whichever is ready."""
    deferred = True

    def __init__(self, ex, decision, units, workers, speculate):
        super().__init__(ex, decision, units, workers, speculate)
        plan = assign(units, len(workers), NS)
        self.ready = {w.idx: deque() for w in workers}
        for w, pool in zip(workers, plan.per_thread):
            for u in pool:
                u.owner = w.idx
                for vid in u.members:
                    ex.verts[vid].owner = w.idx

    def start(self):
        for u in self.units:
            self._maybe_queue(u)

    def _maybe_queue(self, u):
        if u.running or u.queued:
            return
        v = self.ex._unit_head(u)
        if v is not None and (v.fsm == RDY or (self.speculate and v.fsm == BLK
                                               and self.ex._parents_settled(v))):
            u.queued = True
            self.ready[u.owner].append(u)
            self.ex._wake(self.ex.workers[u.owner])

    def next_unit(self, w):
        q = self.ready.get(w.idx)
        while q:
            u = q.popleft()
            u.queued = False
            if u.running or self.ex._unit_head(u) is None:
                continue
            return u
        return None

    def unit_blocked(self, u):
        pass

    def after_run(self, u):
        self._maybe_queue(u)

    def on_ready(self, v):
        u = v.unit
        if self.ex._unit_head(u) is v:
            self._maybe_queue(u)

    def on_rollback(self, v):
        u = v.unit
        pos = self.ex.upos[v.vid]
        if u.remaining_index > pos:
            u.remaining_index = pos
        self._maybe_queue(u)


class _DFSDriver(_Driver):
    """Units pre-assigned per stratum; each worker walks its strata in order."""
    deferred = True

    def __init__(self, ex, decision, units, workers, speculate):
        super().__init__(ex, decision, units, workers, speculate)
        plan = assign(units, len(workers), DFS)
        self.n_strata = len(plan.strata)
        self.sidx_of = {}
        for s, lst in enumerate(plan.strata):
            for u in lst:
                self.sidx_of[id(u)] = s
        self.lists = {}
        self.cursor = {}
        for w, per in zip(workers, plan.per_thread):
            self.lists[w.idx] = per
            self.cursor[w.idx] = [0, 0]
            for s in per:
                for u in s:
                    u.owner = w.idx
                    for vid in u.members:
                        ex.verts[vid].owner = w.idx

    def start(self):
        pass

    def next_unit(self, w):
        lists = self.lists.get(w.idx)
        if lists is None:
            return None
        cur = self.cursor[w.idx]
        ex = self.ex
        while cur[0] < self.n_strata:
            lst = lists[cur[0]]
            while cur[1] < len(lst) and ex._unit_head(lst[cur[1]]) is None:
                cur[1] += 1
            if cur[1] < len(lst):
                u = lst[cur[1]]
                if u.running:
                    return None
                v = ex._unit_head(u)
                if v.fsm == RDY or (self.speculate and v.fsm == BLK and ex._parents_settled(v)):
                    return u
                return None
            s = cur[0]
            if self.decision.abort == EAGER:
                ex._process_group_checks(self.decision_group, w)
            if cur[0] == s and cur[1] >= len(lists[s]):
                cur[0] += 1
                cur[1] = 0
        return None

    def unit_blocked(self, u):
        pass

    def after_run(self, u):
        pass

    def on_ready(self, v):
        self.ex._wake(self.ex.workers[v.unit.owner])

    def on_rollback(self, v):
        u = v.unit
        pos = self.ex.upos[v.vid]
        if u.remaining_index > pos:
            u.remaining_index = pos
        cur = self.cursor[u.owner]
        s = self.sidx_of[id(u)]
        if s <= cur[0]:
            cur[0] = s
            cur[1] = 0
        self.ex._wake(self.ex.workers[u.owner])


class _BFSDriver(_Driver):
    """Shared pool per stratum with a barrier between strata."""

    def __init__(self, ex, decision, units, workers, speculate):
        super().__init__(ex, decision, units, workers, speculate)
        plan = assign(units, len(workers), BFS)
        self.strata = plan.strata
        self.sidx_of = {}
        for s, lst in enumerate(self.strata):
            for u in lst:
                self.sidx_of[id(u)] = s
                u.owner = -1
        self.cur = 0
        self.pool = deque()
        self.blocked = set()
        self.barriers = 0

    def start(self):
        self._fill()

    def _fill(self):
        self.blocked.clear()
        if self.cur < len(self.strata):
            self.pool = deque(u for u in self.strata[self.cur] if self.ex._unit_head(u) is not None)
        else:
            self.pool = deque()
        for u in self.pool:
            u.queued = True

    def next_unit(self, w):
        ex = self.ex
        while self.cur < len(self.strata):
            while self.pool:
                u = self.pool.popleft()
                u.queued = False
                if u.running or ex._unit_head(u) is None:
                    continue
                return u
            if self.blocked or any(u.running for u in self.strata[self.cur]):
                return None
            if any(ex._unit_head(u) is not None for u in self.strata[self.cur]):
                # rolled back while running; requeue
                self._fill()
                continue
            # barrier: the stratum is complete
            self.barriers += 1
            s = self.cur
            if self.decision.abort == EAGER:
                ex._process_group_checks(self.decision_group, w)
                if self.cur == s and any(ex._unit_head(u) is not None for u in self.strata[s]):
                    # an abort sent work back into this stratum
                    self._fill()
                    continue
            if self.cur == s:
                self.cur += 1
            self._fill()
            self.wake_all()
        return None

    def unit_blocked(self, u):
        self.blocked.add(u)

    def after_run(self, u):
        if u.queued or u in self.blocked or self.sidx_of[id(u)] != self.cur:
            return
        v = self.ex._unit_head(u)
        if v is None:
            return
        if v.fsm == RDY:
            u.queued = True
            self.pool.append(u)
            self.wake_all()
        else:
            self.blocked.add(u)

    def on_ready(self, v):
        u = v.unit
        if u in self.blocked and self.ex._unit_head(u) is v:
            self.blocked.discard(u)
            u.queued = True
            self.pool.append(u)
            self.wake_all()

    def on_rollback(self, v):
        u = v.unit
        pos = self.ex.upos[v.vid]
        if u.remaining_index > pos:
            u.remaining_index = pos
        s = self.sidx_of[id(u)]
        if s < self.cur:
            self.cur = s
            self._fill()
            self.wake_all()
        elif s == self.cur and not u.queued and not u.running:
            self.blocked.discard(u)
            u.queued = True
            self.pool.append(u)
            self.wake_all()


_DRIVERS = {NS: _NSDriver, DFS: _DFSDriver, BFS: _BFSDriver}


# -- executor ----------------------------------------------------------------------

class BatchExecutor:
    """Runs one batch.  ``decisions`` is a decision or a ``{group: decision}`` map.

    ``speculate`` defaults to on for NS and DFS groups.  ``mutations`` disables
    parts of abort handling and exists only so tests can check that the
    verifier notices: ``skip_ld_closure``, ``skip_truncation``, ``skip_cascade``.
    """

    def __init__(self, tpg: TPG, table: VersionedStateTable, registry, decisions,
                 n_threads: int = 1, speculate: Optional[bool] = None,
                 log_transitions: bool = False, mutations=()):
        if not tpg.refined:
            raise ExecutorError("executor needs a refined TPG")
        if n_threads < 1:
            raise ExecutorError("need at least one worker")
        self.tpg = tpg
        self.table = table
        self.registry = registry
        self._fns = _FnCache(registry)
        self.verts = tpg.vertices
        self.n_threads = n_threads
        self.speculate_flag = speculate
        self.log = [] if log_transitions else None
        self.mutations = frozenset(mutations)
        for m in self.mutations:
            if m not in ("skip_ld_closure", "skip_truncation", "skip_cascade"):
                raise ExecutorError(f"unknown mutation {m!r}")
        groups = sorted({t.group for t in tpg.txns}) or [0]
        if isinstance(decisions, SchedulingDecision):
            decisions = {g: decisions for g in groups}
        self.decisions = {g: decisions.get(g) or next(iter(decisions.values())) for g in groups}
        self._mu = threading.Lock()
        self.workers = [_Worker(i, self._mu) for i in range(n_threads)]
        self._prepared = False
        self._done = False
        self._error = None
        self._n_idle = 0
        self._sweeps = 0
        self._eager_signals = False
        self._waiters: dict = {}
        self._checkq: dict = {g: [] for g in groups}
        self.exec_count = [0] * len(self.verts)
        self._clear = bytearray(len(self.verts))

    # -- setup ----------------------------------------------------------------

    def prepare(self):
        with self._mu:
            if not self._prepared:
                self._prepared = True
                self._setup()

    def _setup(self):
        tpg, verts = self.tpg, self.verts
        self.txns = [_Txn(i, t.txn_ts, list(tpg.txn_vids[i]), t.group)
                     for i, t in enumerate(tpg.txns)]
        self.by_ts = sorted(self.txns, key=lambda t: t.ts)
        for pos, t in enumerate(self.by_ts):
            t.pos = pos
        self._cursor = 0
        groups = list(self.decisions)
        gv = {g: [] for g in groups}
        for t in self.txns:
            gv[t.group].extend(t.vids)
        # units per group, then merge any cross-group cycles and rank globally
        units = []
        for g in groups:
            for u in form_units(tpg, self.decisions[g].granularity, gv[g]):
                u.group = g
                units.append(u)
        for i, u in enumerate(units):
            u.unit_id = i
        if all(len(u.members) == 1 for u in units):
            # one vertex per unit: the vertex graph is acyclic and the
            # planner's strata already rank it, once per graph
            if tpg.strata is None:
                stratify(tpg)
            for u in units:
                u.rank = verts[u.members[0]].rank
        else:
            edges = inter_unit_edges(tpg, units)
            if len(groups) > 1 and edges:
                merged = detect_cycles(units, edges, tpg)
                if len(merged) != len(units):
                    units = merged
                    for u in units:
                        u.group = verts[u.members[0]].group
                    edges = None
            unit_ranks(tpg, units, edges)
        self.units = units
        self.upos = [0] * len(verts)
        for u in units:
            for i, vid in enumerate(u.members):
                verts[vid].unit = u
                self.upos[vid] = i
        # thread split between groups
        by_group = {g: [u for u in units if u.group == g] for g in groups}
        share = self._split_threads({g: sum(len(u) for u in by_group[g]) for g in groups})
        self.drivers = {}
        for g in groups:
            d = self.decisions[g]
            mode = d.explore_variant if d.explore == S else NS
            spec = self.speculate_flag
            if spec is None:
                spec = mode in (NS, DFS)
            ws = [self.workers[i] for i in share[g]]
            drv = _DRIVERS[mode](self, d, by_group[g], ws, spec)
            drv.decision_group = g
            self.drivers[g] = drv
            for w in ws:
                w.drivers.append(drv)
        for v in verts:
            v.fsm = BLK
            v.gen = 0
            v.cgen = 0
            v.record = None
            v.unresolved = len(v.parents)
            if not self.drivers[v.unit.group].deferred:
                v.owner = None
        for t in self.txns:
            head = verts[t.vids[0]]
            t.coord = head.owner if head.owner is not None else -1
        for vid in tpg.order:
            v = verts[vid]
            if v.unresolved == 0:
                self._transition(v, RDY, "T1", "init")
        self._driver_of = {g: self.drivers[g] for g in groups}
        for d in self.drivers.values():
            d.start()
        self.table.begin_batch()

    def _split_threads(self, sizes):
        groups = list(sizes)
        n = self.n_threads
        if len(groups) == 1 or n < len(groups):
            return {g: list(range(n)) for g in groups}
        total = sum(sizes.values()) or 1
        counts = {g: 1 for g in groups}
        for _ in range(n - len(groups)):
            g = max(groups, key=lambda g: sizes[g] / total - counts[g] / n)
            counts[g] += 1
        out, nxt = {}, 0
        for g in groups:
            out[g] = list(range(nxt, nxt + counts[g]))
            nxt += counts[g]
        return out

    # -- small helpers -------------------------------------------------------------

    def _transition(self, v, to, label, reason=""):
        frm = v.fsm
        ok = LEGAL.get((frm, to))
        if ok is None or label not in ok:
            raise IllegalTransition(f"{v.op.op_id}: {frm.name}->{to.name} ({label})")
        v.fsm = to
        if self.log is not None:
            self.log.append((v.op.op_id, frm, to, label, reason))

    def _settled(self, v):
        f = v.fsm
        return f == EXE or (f == ABT and v.unresolved == 0)

    def _parents_settled(self, v):
        verts = self.verts
        for p in v.parents:
            pv = verts[p]
            if not (pv.fsm == EXE or (pv.fsm == ABT and pv.unresolved == 0)):
                return False
        return True

    def _unit_head(self, u):
        verts = self.verts
        m = u.members
        i = u.remaining_index
        n = len(m)
        while i < n:
            f = verts[m[i]].fsm
            if f != EXE and f != ABT:
                break
            i += 1
        u.remaining_index = i
        return verts[m[i]] if i < n else None

    def _wake(self, w):
        # a pending worker has been notified since it last looked for work
        if not w.pending:
            w.pending = True
            w.cond.notify()

    def _acquire(self, w):
        t0 = perf()
        self._mu.acquire()
        w.t.lock += perf() - t0

    # -- signals ---------------------------------------------------------------------

    def _settle(self, v):
        verts = self.verts
        stack = [v]
        while stack:
            x = stack.pop()
            for c in x.children:
                cv = verts[c]
                if cv.owner is not None and not self._eager_signals:
                    w = self.workers[cv.owner]
                    w.holder.append((c, cv.cgen))
                    self._wake(w)
                    continue
                cv.unresolved -= 1
                if cv.unresolved == 0:
                    if cv.fsm == BLK:
                        self._transition(cv, RDY, "T1")
                        self._driver_of[cv.unit.group].on_ready(cv)
                    elif cv.fsm == ABT:
                        stack.append(cv)

    def _drain(self, w):
        verts = self.verts
        h = w.holder
        while h:
            c, cg = h.popleft()
            cv = verts[c]
            if cv.cgen != cg:
                continue
            cv.unresolved -= 1
            if cv.unresolved == 0:
                if cv.fsm == BLK:
                    self._transition(cv, RDY, "T1")
                    self._driver_of[cv.unit.group].on_ready(cv)
                elif cv.fsm == ABT:
                    self._settle(cv)
        if w.notices:
            lst, w.notices = w.notices, []
            self._process_checks(lst, w)

    # -- computing a single op (no engine lock held) -----------------------------------

    def _compute(self, v) -> ExecRecord:
        op = v.op
        ts = op.txn_ts
        reg = self._fns
        table = self.table
        ks = op.keys
        params = op.params
        rec = ExecRecord(op.op_id)
        target = None
        tks = type(ks)
        if tks is Deterministic:
            k = ks.key
            vals = [table.read_version(k, ts)]
            rec.resolved_keys = (k,)
            if op.kind == OpKind.WRITE:
                target = k
        elif tks is MultiKey:
            vals = [table.read_version(k, ts) for k in ks.reads]
            target = ks.target
            rec.resolved_keys = (target,) + tuple(k for k in ks.reads if k != target)
        elif tks is NonDeterministic:
            n_keys = self.tpg.n_keys
            cands = ks.candidates
            picked = reg.resolve(ks.selector)(params, n_keys)
            if op.kind == OpKind.WRITE:
                target = picked
                if ks.read_selector is not None:
                    reads = tuple(reg.resolve(ks.read_selector)(params, n_keys))
                else:
                    reads = (picked,)
            else:
                reads = tuple(picked) if isinstance(picked, (tuple, list)) else (picked,)
            keys = reads if target is None else (target,) + reads
            for k in keys:
                if not isinstance(k, int) or k < 0 or k >= n_keys or \
                        (cands is not None and k not in cands):
                    rec.failed = True
                    rec.output = FAILED
                    rec.resolved_keys = ()
                    return rec
            rec.resolved_keys = tuple(dict.fromkeys(keys))
            vals = [table.read_version(k, ts) for k in reads]
        elif tks is WindowRange:
            if ks.selector is None:
                keys = ks.reads
            else:
                keys = tuple(reg.resolve(ks.selector)(params, self.tpg.n_keys))
                cands = ks.candidates
                for k in keys:
                    if not isinstance(k, int) or k < 0 or k >= self.tpg.n_keys or \
                            (cands is not None and k not in cands):
                        rec.failed = True
                        rec.output = FAILED
                        return rec
            wins = table.window_read(keys, ks.trigger, ks.size)
            vals = [[ver.value for ver in w] for w in wins]
            target = ks.target
            rec.resolved_keys = tuple(keys) if target is None else \
                (target,) + tuple(k for k in keys if k != target)
        else:
            raise ExecutorError(f"unsupported key spec {ks!r}")
        if op.cond_fn is not None and not reg.resolve(op.cond_fn)(vals, params):
            rec.failed = True
            rec.output = FAILED
            return rec
        if op.value_fn is not None:
            out = reg.resolve(op.value_fn)(vals, params)
            cost = reg.cost(op.value_fn)
            if cost > 0:
                kernels.spin_us(cost)
        else:
            out = vals[0] if len(vals) == 1 else tuple(vals)
        if target is not None:
            rec.write = (target, out)
        rec.output = out
        return rec

    # -- commit / cursor -------------------------------------------------------------

    def _commit(self, w, v, rec):
        op = v.op
        if not rec.failed and rec.write is not None:
            k, val = rec.write
            try:
                self.table.write_version(k, op.txn_ts, val, op.op_id)
                rec.written_versions = [(k, op.txn_ts)]
            except DuplicateVersion:
                # two ops of one transaction landed on the same key
                rec.failed = True
                rec.output = FAILED
        self._transition(v, EXE, "T2" if v.fsm == RDY else "T3")
        v.record = rec
        self.exec_count[v.vid] += 1
        txn = self.txns[v.txn]
        txn.n_exec += 1
        if rec.failed:
            txn.n_failed += 1
            self._route_check(txn)
        self._settle(v)
        if txn.pos == self._cursor:
            self._advance_cursor()

    def _advance_cursor(self):
        by_ts = self.by_ts
        n = len(by_ts)
        while self._cursor < n:
            t = by_ts[self._cursor]
            if t.status == ABORTED:
                self._cursor += 1
                continue
            if t.status == PENDING and t.n_exec == len(t.vids):
                if t.n_failed == 0:
                    t.status = COMMITTED
                    self._cursor += 1
                    self._on_decided(t)
                    continue
                self._route_check(t)
            break

    def _on_decided(self, t):
        ws = self._waiters.pop(t.idx, None)
        if ws:
            for ti in ws:
                self._route_check(self.txns[ti])

    # -- abort confirmation ------------------------------------------------------------

    def _route_check(self, t):
        d = self.decisions[t.group]
        if d.abort == LAZY or t.status != PENDING:
            return
        if d.explore == NS and t.coord >= 0:
            w = self.workers[t.coord]
            w.notices.append(t.idx)
            self._wake(w)
        else:
            self._checkq[t.group].append(t.idx)

    def _blocker(self, v):
        """Index of a pending txn ``v``'s inputs still depend on, else None."""
        verts, txns, clear = self.verts, self.txns, self._clear
        stack = [p for p in v.parents if not clear[p]]
        seen = set()
        while stack:
            p = stack.pop()
            if p in seen:
                continue
            seen.add(p)
            pv = verts[p]
            st = txns[pv.txn].status
            if st == PENDING:
                return pv.txn
            if st == ABORTED:
                stack.extend(q for q in pv.parents if not clear[q])
        # decisions are final, so everything walked here stays clear
        for p in seen:
            clear[p] = 1
        return None

    def _confirm(self, t):
        blocker = None
        for vid in t.vids:
            v = self.verts[vid]
            if v.fsm == EXE and v.record.failed:
                b = self._blocker(v)
                if b is None:
                    return True
                if blocker is None:
                    blocker = b
        return blocker

    def _process_checks(self, lst, w):
        while lst:
            t = self.txns[lst.pop()]
            if t.status != PENDING or t.n_failed == 0:
                continue
            res = self._confirm(t)
            if res is True:
                self._abort_txn(t, w, "eager")
            elif res is not None:
                self._waiters.setdefault(res, []).append(t.idx)

    def _process_group_checks(self, g, w):
        self._process_checks(self._checkq[g], w)

    # -- abort and rollback ---------------------------------------------------------

    def _drop_versions(self, v, seeds):
        rec = v.record
        own = v.op.op_id
        by_op = self.tpg.by_op
        for k, ts in rec.written_versions:
            for ver in self.table.truncate_after(k, ts):
                if ver.writer != own:
                    seeds.append(by_op[ver.writer])
        rec.written_versions = []

    def _abort_txn(self, t, w, reason):
        t0 = perf()
        t.status = ABORTED
        verts = self.verts
        roots = []
        seeds = []
        skip_ld = "skip_ld_closure" in self.mutations
        for vid in t.vids:
            v = verts[vid]
            if skip_ld and not (v.fsm == EXE and v.record.failed):
                continue
            v.gen += 1
            if v.fsm == EXE:
                rec = v.record
                if rec.failed:
                    t.n_failed -= 1
                t.n_exec -= 1
                if "skip_truncation" not in self.mutations:
                    self._drop_versions(v, seeds)
                w.t.abort += rec.useful
                w.t.useful -= rec.useful
            if v.fsm != ABT:
                self._transition(v, ABT, "T4", reason)
            v.record = None
            roots.append(vid)
        self._rollback_closure(roots, seeds, w)
        self._on_decided(t)
        if t.pos == self._cursor:
            self._advance_cursor()
        w.t.abort += perf() - t0

    def _rollback_closure(self, roots, seeds, w):
        verts, txns = self.verts, self.txns
        heap = []
        queued = set()

        def push(vid):
            if vid not in queued:
                queued.add(vid)
                heapq.heappush(heap, (verts[vid].order, vid))

        rootset = set(roots)
        for r in roots:
            push(r)
            for c in verts[r].children:
                push(c)
        for s in seeds:
            push(s)
        skip_cascade = "skip_cascade" in self.mutations
        changed = []
        while heap:
            _, vid = heapq.heappop(heap)
            v = verts[vid]
            rolled = False
            if v.fsm == EXE and vid not in rootset and not skip_cascade:
                t = txns[v.txn]
                if t.status != PENDING and not self.mutations:
                    raise ExecutorError(f"rollback reached decided txn at ts {t.ts}")
                rec = v.record
                t.n_exec -= 1
                if rec.failed:
                    t.n_failed -= 1
                more = []
                self._drop_versions(v, more)
                for s in more:
                    push(s)
                w.t.abort += rec.useful
                w.t.useful -= rec.useful
                v.record = None
                rolled = True
                for c in v.children:
                    push(c)
            elif v.fsm == ABT:
                for c in v.children:
                    push(c)
            cnt = 0
            for p in v.parents:
                pv = verts[p]
                if not (pv.fsm == EXE or (pv.fsm == ABT and pv.unresolved == 0)):
                    cnt += 1
            v.unresolved = cnt
            v.cgen += 1
            if v.fsm == ABT:
                changed.append(v)
                continue
            if v.fsm != EXE:
                v.gen += 1
            if rolled:
                v.gen += 1
                if cnt == 0:
                    self._transition(v, RDY, "T5", "rollback")
                else:
                    self._transition(v, BLK, "T6", "rollback")
            elif v.fsm == RDY and cnt > 0:
                self._transition(v, BLK, "T6", "rollback")
            elif v.fsm == BLK and cnt == 0:
                self._transition(v, RDY, "T5", "rollback")
            changed.append(v)
        for v in changed:
            self._driver_of[v.unit.group].on_rollback(v)

    # -- worker loop ---------------------------------------------------------------

    def _next_task(self, w):
        w.pending = False
        if w.holder or w.notices:
            self._drain(w)
        for d in w.drivers:
            u = d.next_unit(w)
            if u is not None:
                return d, u
        return None

    def _run_unit(self, w, d, u):
        u.running = True
        spec = d.speculate
        solo = len(self.workers) == 1
        try:
            while True:
                v = self._unit_head(u)
                if v is None:
                    return
                if v.fsm == BLK and not (spec and self._parents_settled(v)):
                    d.unit_blocked(u)
                    return
                if v.fsm != RDY and v.fsm != BLK:
                    d.unit_blocked(u)
                    return
                g = v.gen
                if solo:
                    t0 = perf()
                    rec = self._compute(v)
                    t1 = perf()
                else:
                    self._mu.release()
                    t0 = perf()
                    try:
                        rec = self._compute(v)
                    finally:
                        t1 = perf()
                        self._acquire(w)
                dt = t1 - t0
                if v.gen != g or (v.fsm != RDY and v.fsm != BLK):
                    w.t.abort += dt
                    continue
                w.t.useful += dt
                rec.useful = dt
                t2 = perf()
                self._commit(w, v, rec)
                w.t.explore += perf() - t2
                if w.holder:
                    self._drain(w)
        finally:
            u.running = False
            d.after_run(u)

    def _quiescence(self, w):
        if self._cursor >= len(self.by_ts):
            self._finish()
            return
        verts = self.verts
        stuck = [v for v in verts if not (v.fsm == EXE or (v.fsm == ABT and v.unresolved == 0))]
        if stuck:
            lines = [f"{v!r} fsm={v.fsm.name} unresolved={v.unresolved} parents="
                     + ",".join(f"{verts[p]!r}:{verts[p].fsm.name}" for p in v.parents)
                     for v in stuck[:20]]
            raise DeadlockError(f"{len(stuck)} vertices cannot progress:\n" + "\n".join(lines))
        self._sweeps += 1
        if self._sweeps > len(self.by_ts) + 1:
            raise LivelockError("abort sweeps exceeded the batch size")
        self._repair(w)
        if self._cursor >= len(self.by_ts):
            self._finish()
            return
        for x in self.workers:
            self._wake(x)

    def _repair(self, w):
        """Decide every remaining transaction in timestamp order.

        Runs with all workers idle.  Each transaction before the cursor is
        decided, so a failure found here is final: abort, then re-run inline
        whatever the rollback reset.  One pass decides the whole batch.
        """
        t0 = perf()
        useful = 0.0
        self._eager_signals = True
        try:
            for t in self.by_ts[self._cursor:]:
                if t.status != PENDING:
                    continue
                for vid in t.vids:
                    v = self.verts[vid]
                    if v.fsm == RDY or v.fsm == BLK:
                        if not self._parents_settled(v):
                            raise DeadlockError(f"{v!r} has unsettled inputs during repair")
                        t1 = perf()
                        rec = self._compute(v)
                        rec.useful = perf() - t1
                        useful += rec.useful
                        w.t.useful += rec.useful
                        self._commit(w, v, rec)
                if t.status == PENDING and t.n_failed > 0:
                    self._abort_txn(t, w, "lazy")
                self._advance_cursor()
        finally:
            self._eager_signals = False
        w.t.abort += perf() - t0 - useful

    def _finish(self):
        self._done = True
        for x in self.workers:
            x.pending = True
            x.cond.notify()

    def _worker_main(self, w):
        self._acquire(w)
        try:
            while not self._done:
                t0 = perf()
                task = self._next_task(w)
                w.t.explore += perf() - t0
                if task is not None:
                    self._run_unit(w, *task)
                    continue
                if w.pending or self._done:
                    continue
                self._n_idle += 1
                if self._n_idle == len(self.workers) and \
                        not any(x.pending for x in self.workers):
                    self._quiescence(w)
                    self._n_idle -= 1
                    continue
                t0 = perf()
                w.cond.wait()
                w.t.sync += perf() - t0
                self._n_idle -= 1
        except BaseException as e:  # surface worker failures to the caller
            if self._error is None:
                self._error = e
            self._finish()
        finally:
            self._mu.release()

    def run(self) -> BatchResult:
        self.prepare()
        threads = [threading.Thread(target=self._worker_main, args=(w,), daemon=True)
                   for w in self.workers[1:]]
        for th in threads:
            th.start()
        self._worker_main(self.workers[0])
        for th in threads:
            th.join()
        self.table.end_batch()
        if self._error is not None:
            raise self._error
        return self._result()

    def _result(self) -> BatchResult:
        for v in self.verts:
            if v.fsm not in (EXE, ABT):
                raise ExecutorError(f"{v!r} ended in {v.fsm.name}")
        total = Timers()
        for w in self.workers:
            total.add(w.t)
        committed = [t.status == COMMITTED for t in self.txns]
        if any(t.status == PENDING for t in self.txns):
            raise ExecutorError("batch ended with undecided transactions")
        return BatchResult(committed, [v.record for v in self.verts], total,
                           [w.t for w in self.workers], self.log, list(self.exec_count),
                           self._sweeps, dict(self.decisions))

    # -- single-step interface (tests and replays) ----------------------------------

    def _step_worker(self):
        return self.workers[0]

    def try_ready(self, v) -> bool:
        with self._mu:
            if v.fsm == BLK and v.unresolved == 0:
                self._transition(v, RDY, "T1")
                return True
            return False

    def _step_exec(self, v, spec):
        self.prepare()
        w = self._step_worker()
        with self._mu:
            if w.holder:
                self._drain(w)
            if v.fsm == RDY:
                pass
            elif v.fsm == BLK and spec:
                if not self._parents_settled(v):
                    return None
            else:
                raise NotReady(f"{v!r} is {v.fsm.name}")
            rec = self._compute(v)
            self._commit(w, v, rec)
            return rec

    def execute(self, v) -> ExecRecord:
        if v.fsm != RDY:
            raise NotReady(f"{v!r} is {v.fsm.name}")
        return self._step_exec(v, False)

    def speculate(self, v):
        """Run a BLK vertex whose inputs are available; None if they are not."""
        if v.fsm != BLK:
            raise NotReady(f"{v!r} is {v.fsm.name}")
        return self._step_exec(v, True)

    def fail(self, v):
        """Abort the transaction of ``v`` immediately (LD closure included)."""
        self.prepare()
        with self._mu:
            t = self.txns[v.txn]
            if t.status == PENDING:
                self._abort_txn(t, self._step_worker(), "fail")

    def rollback(self, v):
        """Undo ``v`` and everything downstream of it; returns v's new state."""
        self.prepare()
        with self._mu:
            self._rollback_closure([], [v.vid], self._step_worker())
            return v.fsm

    def abort_confirmed(self):
        """Process every confirmable failure now (eager semantics)."""
        with self._mu:
            w = self._step_worker()
            for t in self.by_ts:
                if t.status == PENDING and t.n_failed > 0:
                    self._route_check(t)
            for g in self._checkq:
                self._process_group_checks(g, w)
            if w.notices:
                lst, w.notices = w.notices, []
                self._process_checks(lst, w)

    def sweep(self):
        """Lazy-abort pass: decide every remaining transaction in timestamp order."""
        with self._mu:
            self._repair(self._step_worker())

    def txn_status(self, v) -> int:
        return self.txns[v.txn].status


def run_batch(tpg, table, registry, decision, n_threads=1, **kw) -> BatchResult:
    return BatchExecutor(tpg, table, registry, decision, n_threads, **kw).run()


def explore_structured(tpg, table, registry, variant=DFS, n_threads=1, granularity=FINE,
                       abort=EAGER, **kw):
    d = SchedulingDecision(S, granularity, abort, variant)
    return run_batch(tpg, table, registry, d, n_threads, **kw)


def explore_unstructured(tpg, table, registry, n_threads=1, granularity=FINE, abort=EAGER, **kw):
    d = SchedulingDecision(NS, granularity, abort)
    return run_batch(tpg, table, registry, d, n_threads, **kw)


def format_transitions(log) -> str:
    return "\n".join(f"{op} {a.name}→{b.name} {label}{(' ' + r) if r else ''}"
                     for op, a, b, label, r in log)
