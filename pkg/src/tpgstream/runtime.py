"""Operator programming model and the punctuation-driven batch loop.

An operator supplies three callables:

* ``pre_process(event) -> EventBlotter`` extracts parameters,
* ``state_access(blotter)`` issues ``request_*`` calls which are recorded,
  not executed,
* ``post_process(event, blotter) -> output`` runs after the batch is decided.

Events are cached until a punctuation arrives.  At that point the batch's
TPG is refined, a strategy is chosen, the executor runs, and every cached
event is post-processed in timestamp order.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from . import planner
from .core import (Deterministic, FnKind, FunctionRef, MultiKey, NonDeterministic, Operation,
                   OpKind, StateTransaction, UdfRegistry, WindowRange)
from .executor import BatchExecutor, Timers
from .scheduler import (DecisionThresholds, SchedulingDecision, decide, decide_nested,
                        measure_properties, trace_line)
from .state_store import VersionedStateTable

perf = time.perf_counter

FAILED_MARKER = "failed state access"
MAX_STMTS = 64


class RuntimeConfigError(Exception):
    pass


class RequestError(Exception):
    pass


@dataclass(slots=True)
class Event:
    event_id: int
    ts: int
    etype: str
    args: tuple = ()
    group: int = 0
    arrival_index: int = -1


@dataclass(frozen=True, slots=True)
class Punctuation:
    ts: int


class EventBlotter:
    PENDING, COMMITTED, FAILED = "pending", "committed", "failed"

    __slots__ = ("event_id", "params", "status", "results", "group", "noop", "error",
                 "_ops", "_ts", "_reg", "_n_keys")

    def __init__(self, event_id, params=None, group=0, noop=False):
        self.event_id = event_id
        self.params = params if params is not None else {}
        self.status = self.PENDING
        self.results = []
        self.group = group
        self.noop = noop
        self.error = None
        self._ops = None
        self._ts = -1
        self._reg = None
        self._n_keys = 0

    def finish(self, status):
        if self.status != self.PENDING:
            raise RequestError(f"blotter {self.event_id} already {self.status}")
        if status not in (self.COMMITTED, self.FAILED):
            raise RequestError(f"bad final status {status!r}")
        self.status = status

    @classmethod
    def rejected(cls, event_id, reason, group=0):
        eb = cls(event_id, group=group)
        eb.error = reason
        eb.status = cls.FAILED
        return eb

    def __repr__(self):
        return f"EventBlotter({self.event_id}, {self.status})"


@dataclass
class OperatorSpec:
    pre_process: Callable
    state_access: Callable
    post_process: Callable
    registry: UdfRegistry
    name: str = ""


# -- request API (called from state_access) -------------------------------------

def _emit(eb: EventBlotter, kind, keys, value_fn=None, cond_fn=None, params=()):
    if eb._ops is None:
        raise RequestError("requests are only valid inside state_access")
    for ref in (value_fn, cond_fn):
        if ref is not None and (not isinstance(ref, FunctionRef) or ref not in eb._reg):
            raise RequestError(f"unknown function {ref!r}")
    for ref in (getattr(keys, "selector", None), getattr(keys, "read_selector", None)):
        if ref is not None and ref not in eb._reg:
            raise RequestError(f"unknown function {ref!r}")
    stmt = len(eb._ops)
    if stmt >= MAX_STMTS:
        raise RequestError("too many operations in one transaction")
    op = Operation(eb._ts * MAX_STMTS + stmt, eb._ts, stmt, kind, keys, value_fn, cond_fn,
                   tuple(params))
    eb._ops.append(op)
    return op


def request_read(eb, key, cond=None, params=()):
    return _emit(eb, OpKind.READ, Deterministic(key), None, cond, params)


def request_write(eb, key, value_fn, reads=None, cond=None, params=()):
    """Write ``value_fn(values of reads)`` to ``key``; ``reads`` defaults to ``(key,)``."""
    if reads is None or tuple(reads) == (key,):
        ks = Deterministic(key)
    else:
        ks = MultiKey(key, tuple(reads))
    return _emit(eb, OpKind.WRITE, ks, value_fn, cond, params)


def request_window_read(eb, keys, size, agg, params=(), selector=None, candidates=None,
                        cond=None):
    if size <= 0:
        raise RequestError("window size must be > 0")
    ks = WindowRange(size, eb._ts, tuple(keys or ()), selector, candidates)
    return _emit(eb, OpKind.READ, ks, agg, cond, params)


def request_window_write(eb, target, keys, size, agg, params=(), cond=None):
    if size <= 0:
        raise RequestError("window size must be > 0")
    ks = WindowRange(size, eb._ts, tuple(keys), target=target)
    return _emit(eb, OpKind.WRITE, ks, agg, cond, params)


def request_nondet_read(eb, selector, candidates=None, cond=None, params=()):
    return _emit(eb, OpKind.READ, NonDeterministic(selector, None, candidates), None, cond, params)


def request_nondet_write(eb, selector, value_fn, read_selector=None, candidates=None,
                         cond=None, params=()):
    ks = NonDeterministic(selector, read_selector, candidates)
    return _emit(eb, OpKind.WRITE, ks, value_fn, cond, params)


def state_access(operator: OperatorSpec, eb: EventBlotter, ts: int, n_keys: int,
                 group: int = 0) -> Optional[StateTransaction]:
    """Record the operator's requests for ``eb`` as one transaction at ``ts``."""
    if eb.status != EventBlotter.PENDING:
        raise RequestError(f"blotter {eb.event_id} is not pending")
    if eb.noop:
        return None
    eb._ops, eb._ts, eb._reg, eb._n_keys = [], ts, operator.registry, n_keys
    try:
        operator.state_access(eb)
        ops = eb._ops
    finally:
        eb._ops = None
    if not ops:
        raise RequestError(f"event {eb.event_id} issued no operations")
    return StateTransaction(ts, tuple(ops), eb.event_id, group)


# -- engine ---------------------------------------------------------------------

Strategy = Union[str, SchedulingDecision, dict]


@dataclass
class EngineConfig:
    n_threads: int = 1
    strategy: Strategy = "auto"
    thresholds: Optional[DecisionThresholds] = None
    speculate: Optional[bool] = None
    log_transitions: bool = False
    mutations: tuple = ()
    abort_hint: Optional[Callable] = None   # group -> expected abort ratio
    ewma_alpha: float = 0.5

    def validate(self):
        if self.n_threads < 1:
            raise RuntimeConfigError("threads must be >= 1")
        s = self.strategy
        if not (s == "auto" or isinstance(s, (SchedulingDecision, dict))):
            raise RuntimeConfigError(f"bad strategy {s!r}")
        if not 0.0 < self.ewma_alpha <= 1.0:
            raise RuntimeConfigError("ewma_alpha must lie in (0, 1]")


@dataclass
class BatchStats:
    batch: int
    events: int
    wall: float
    construct: float
    timers: Timers
    decisions: dict
    trace: list
    latencies: list
    committed: int
    aborted: int
    sweeps: int = 0
    transitions: Optional[list] = None


class Engine:
    """Runs one operator over a stream of events and punctuations."""

    def __init__(self, operator: OperatorSpec, n_keys: int, initial=0,
                 config: Optional[EngineConfig] = None):
        self.operator = operator
        self.config = config or EngineConfig()
        self.config.validate()
        self.table = VersionedStateTable(n_keys, initial)
        self.n_keys = n_keys
        self.thresholds = self.config.thresholds or DecisionThresholds.default()
        self.batches: list[BatchStats] = []
        self.outputs: list = []
        self.blotters: dict = {}
        self._abort_est: dict = {}
        self._last_punct = 0
        self._cache: list = []
        self._tpg = None
        self._construct = 0.0
        self._ended = False

    # -- ingestion --------------------------------------------------------------

    def _new_batch(self):
        self._tpg = planner.TPG(self.n_keys)
        self._cache = []
        self._construct = 0.0

    def ingest(self, e: Event):
        if self._ended:
            warnings.warn(f"event {e.event_id} after stream end ignored")
            return
        if self._tpg is None:
            self._new_batch()
        if e.ts <= self._last_punct:
            warnings.warn(f"late event {e.event_id} (ts {e.ts}) ignored")
            return
        t0 = perf()
        op = self.operator
        try:
            eb = op.pre_process(e)
        except Exception as exc:  # malformed payload
            eb = EventBlotter.rejected(e.event_id, str(exc), e.group)
        eb.group = e.group
        self._cache.append((e, eb, t0))
        self.blotters[e.event_id] = eb
        if eb.status == EventBlotter.PENDING and not eb.noop:
            try:
                txn = state_access(op, eb, e.ts - self._last_punct, self.n_keys, e.group)
            except Exception as exc:
                eb.error = str(exc)
                eb.finish(EventBlotter.FAILED)
            else:
                planner.phase1_insert(self._tpg, txn)
        self._construct += perf() - t0

    # -- batch ------------------------------------------------------------------

    def _decisions(self, tpg, batch):
        groups: dict = {}
        for i, t in enumerate(tpg.txns):
            groups.setdefault(t.group, []).extend(tpg.txn_vids[i])
        if not groups:
            return {}, []
        cfg = self.config
        s = cfg.strategy
        props = {}
        need_auto = s == "auto" or (isinstance(s, dict) and set(groups) - set(s))
        if need_auto:
            reg = self.operator.registry
            single = len(groups) == 1
            for g, vids in groups.items():
                est = cfg.abort_hint(g) if cfg.abort_hint else self._abort_est.get(g, 0.0)
                props[g] = measure_properties(tpg, est, reg, None if single else vids)
        if s == "auto":
            if len(groups) == 1:
                (g,) = groups
                dec = {g: decide(props[g], self.thresholds)}
            else:
                dec = decide_nested(props, self.thresholds)
        elif isinstance(s, SchedulingDecision):
            dec = {g: s for g in groups}
        else:
            dec = {}
            for g in groups:
                dec[g] = s[g] if g in s else decide(props[g], self.thresholds)
        trace = [trace_line(batch, g, dec[g], props.get(g)) for g in sorted(dec)]
        return dec, trace

    def punctuate(self, p: Punctuation):
        if p.ts <= self._last_punct:
            raise RuntimeConfigError("punctuation timestamps must increase")
        if self._tpg is None:
            self._new_batch()
        tpg, cache = self._tpg, self._cache
        batch = len(self.batches)
        t0 = perf()
        planner.phase2_refine(tpg)
        dec, trace = self._decisions(tpg, batch)
        construct = self._construct + perf() - t0
        t1 = perf()
        res = None
        if tpg.txns:
            cfg = self.config
            ex = BatchExecutor(tpg, self.table, self.operator.registry, dec, cfg.n_threads,
                               speculate=cfg.speculate, log_transitions=cfg.log_transitions,
                               mutations=cfg.mutations)
            res = ex.run()
        # settle blotters
        n_commit = n_abort = 0
        per_group: dict = {}
        for i, txn in enumerate(tpg.txns):
            eb = self.blotters[txn.event_id]
            ok = res.committed[i]
            st = per_group.setdefault(txn.group, [0, 0])
            st[0] += 1
            if ok:
                eb.results = [res.records[vid].output for vid in tpg.txn_vids[i]]
                eb.finish(EventBlotter.COMMITTED)
                n_commit += 1
            else:
                eb.finish(EventBlotter.FAILED)
                n_abort += 1
                st[1] += 1
        for e, eb, _ in cache:
            if eb.status == EventBlotter.PENDING:   # filtered
                eb.finish(EventBlotter.COMMITTED)
        a = self.config.ewma_alpha
        for g, (n, k) in per_group.items():
            old = self._abort_est.get(g, k / n)
            self._abort_est[g] = (1 - a) * old + a * (k / n)
        self.table.gc_batch()
        lat = []
        post = self.operator.post_process
        for e, eb, ingress in sorted(cache, key=lambda c: c[0].ts):
            out = post(e, eb)
            if out is not None:
                self.outputs.append((e.event_id, out))
            lat.append(perf() - ingress)
        wall = perf() - t1
        self.batches.append(BatchStats(
            batch, len(cache), wall + construct, construct,
            res.timers if res else Timers(), dec, trace, lat, n_commit, n_abort,
            res.sweeps if res else 0, res.transitions if res else None))
        self._last_punct = p.ts
        self._tpg = None
        self._cache = []

    def run(self, stream: Iterable) -> list:
        for item in stream:
            if isinstance(item, Punctuation):
                self.punctuate(item)
            else:
                self.ingest(item)
        if self._cache:
            warnings.warn(f"{len(self._cache)} events without a closing punctuation ignored")
            for e, _, _ in self._cache:
                self.blotters.pop(e.event_id, None)
            self._tpg = None
            self._cache = []
        self._ended = True
        return self.outputs

    def abort_estimate(self, group=0) -> float:
        return self._abort_est.get(group, 0.0)


def run(operator: OperatorSpec, stream: Iterable, n_keys: int, initial=0,
        config: Optional[EngineConfig] = None) -> Engine:
    eng = Engine(operator, n_keys, initial, config)
    eng.run(stream)
    return eng


def pre_process(operator: OperatorSpec, e: Event) -> EventBlotter:
    return operator.pre_process(e)


def post_process(operator: OperatorSpec, e: Event, eb: EventBlotter):
    return operator.post_process(e, eb)


def default_post_process(e: Event, eb: EventBlotter):
    if eb.noop:
        return None
    if eb.status == EventBlotter.COMMITTED:
        return tuple(eb.results)
    return FAILED_MARKER


def with_punctuations(events: Iterable[Event], interval: int) -> list:
    """Insert a punctuation after every ``interval`` timestamps and at the end.

    Batches are cut by event timestamp, so shuffled arrival inside a batch is
    preserved while every event lands in the right batch.
    """
    if interval < 1:
        raise RuntimeConfigError("punctuation interval must be >= 1")
    events = list(events)
    if not events:
        return []
    out = []
    buckets: dict = {}
    for e in events:
        buckets.setdefault((e.ts - 1) // interval, []).append(e)
    for b in sorted(buckets):
        out.extend(buckets[b])
        out.append(Punctuation((b + 1) * interval))
    return out


__all__ = ["Event", "EventBlotter", "Punctuation", "OperatorSpec", "Engine", "EngineConfig",
           "BatchStats", "run", "pre_process", "state_access", "post_process",
           "request_read", "request_write", "request_window_read", "request_window_write",
           "request_nondet_read", "request_nondet_write", "default_post_process",
           "with_punctuations", "FAILED_MARKER", "RequestError", "RuntimeConfigError", "FnKind"]
