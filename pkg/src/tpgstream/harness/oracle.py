"""Single-threaded reference execution and result comparison.

The oracle shares nothing with the planner, scheduler or executor: it keeps
one value per key, runs transactions one at a time in timestamp order, and
skips a transaction atomically when any of its operations fails.  Reads
inside a transaction see the state before that transaction; writes are
buffered and applied on commit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..core import Deterministic, MultiKey, NonDeterministic, OpKind, WindowRange
from ..runtime import Event, EventBlotter, Punctuation, state_access

MAX_DIFFS = 20


@dataclass
class OracleResult:
    state: list
    committed: set = field(default_factory=set)
    failed: set = field(default_factory=set)
    outputs: dict = field(default_factory=dict)


class _Fail(Exception):
    pass


def _check(k, n_keys, cands):
    if not isinstance(k, int) or not 0 <= k < n_keys or (cands is not None and k not in cands):
        raise _Fail


def _eval(op, state, snapshot, hist, n_keys, reg):
    ks = op.keys
    params = op.params
    target = None
    if isinstance(ks, Deterministic):
        vals = [state[ks.key]]
        if op.kind == OpKind.WRITE:
            target = ks.key
    elif isinstance(ks, MultiKey):
        vals = [state[k] for k in ks.reads]
        target = ks.target
    elif isinstance(ks, NonDeterministic):
        picked = reg.resolve(ks.selector)(params, n_keys)
        if op.kind == OpKind.WRITE:
            target = picked
            _check(target, n_keys, ks.candidates)
            reads = (tuple(reg.resolve(ks.read_selector)(params, n_keys))
                     if ks.read_selector is not None else (target,))
        else:
            reads = tuple(picked) if isinstance(picked, (list, tuple)) else (picked,)
        for k in reads:
            _check(k, n_keys, ks.candidates)
        vals = [state[k] for k in reads]
    elif isinstance(ks, WindowRange):
        if ks.selector is None:
            keys = ks.reads
        else:
            keys = tuple(reg.resolve(ks.selector)(params, n_keys))
            for k in keys:
                _check(k, n_keys, ks.candidates)
        lo, hi = ks.trigger - ks.size, ks.trigger
        vals = []
        for k in keys:
            w = [snapshot[k]] if lo <= 0 else []
            w.extend(v for ts, v in hist.get(k, ()) if lo <= ts < hi)
            vals.append(w)
        target = ks.target
    else:
        raise TypeError(f"unsupported key spec {ks!r}")
    if op.cond_fn is not None and not reg.resolve(op.cond_fn)(vals, params):
        raise _Fail
    if op.value_fn is not None:
        out = reg.resolve(op.value_fn)(vals, params)
    else:
        out = vals[0] if len(vals) == 1 else tuple(vals)
    return target, out


def _run_batch(events, base, state, operator, n_keys, res):
    reg = operator.registry
    snapshot = list(state)
    hist: dict = {}
    for e in sorted(events, key=lambda e: e.ts):
        local = e.ts - base
        try:
            eb = operator.pre_process(e)
        except Exception:
            eb = EventBlotter.rejected(e.event_id, "malformed", e.group)
        ok = eb.status == EventBlotter.PENDING
        if ok and not eb.noop:
            try:
                txn = state_access(operator, eb, local, n_keys, e.group)
            except Exception:
                ok = False
            else:
                writes, outs = {}, []
                try:
                    for op in txn.ops:
                        tk, out = _eval(op, state, snapshot, hist, n_keys, reg)
                        if tk is not None:
                            if tk in writes:
                                raise _Fail
                            writes[tk] = out
                        outs.append(out)
                except _Fail:
                    ok = False
                else:
                    for k, v in writes.items():
                        state[k] = v
                        hist.setdefault(k, []).append((local, v))
                    eb.results = outs
        if eb.status == EventBlotter.PENDING:
            eb.finish(EventBlotter.COMMITTED if ok else EventBlotter.FAILED)
        (res.committed if eb.status == EventBlotter.COMMITTED else res.failed).add(e.event_id)
        out = operator.post_process(e, eb)
        if out is not None:
            res.outputs[e.event_id] = out


def serial_oracle(stream, operator, n_keys: int, initial=0) -> OracleResult:
    if callable(initial):
        state = [initial(k) for k in range(n_keys)]
    elif isinstance(initial, (list, tuple)):
        state = list(initial)
    else:
        state = [initial] * n_keys
    res = OracleResult(state)
    base = 0
    pending = []
    for item in stream:
        if isinstance(item, Punctuation):
            _run_batch(pending, base, state, operator, n_keys, res)
            base = item.ts
            pending = []
        elif isinstance(item, Event):
            if item.ts > base:
                pending.append(item)
    return res


@dataclass
class VerifyReport:
    ok: bool
    diffs: list
    n_diffs: int = 0

    def text(self) -> str:
        if self.ok:
            return "verify: pass"
        more = f" (showing {len(self.diffs)})" if self.n_diffs > len(self.diffs) else ""
        return f"verify: FAIL, {self.n_diffs} divergences{more}\n" + "\n".join(self.diffs)


def engine_result(engine) -> OracleResult:
    res = OracleResult(engine.table.snapshot())
    for eid, eb in engine.blotters.items():
        (res.committed if eb.status == EventBlotter.COMMITTED else res.failed).add(eid)
    res.outputs = dict(engine.outputs)
    return res


def verify(engine, oracle: OracleResult) -> VerifyReport:
    """Compare final state, committed/failed sets and outputs (first 20 diffs).

    ``engine`` is an ``Engine`` or an ``OracleResult``-shaped object.
    """
    got = engine if isinstance(engine, OracleResult) else engine_result(engine)
    diffs = []
    n = 0

    def note(msg):
        nonlocal n
        n += 1
        if len(diffs) < MAX_DIFFS:
            diffs.append(msg)

    if len(got.state) != len(oracle.state):
        note(f"state size engine={len(got.state)} oracle={len(oracle.state)}")
    for k, (a, b) in enumerate(zip(got.state, oracle.state)):
        if repr(a) != repr(b):
            note(f"state key {k}: engine={a!r} oracle={b!r}")
    for eid in sorted(got.committed - oracle.committed):
        note(f"event {eid}: engine committed, oracle failed")
    for eid in sorted(oracle.committed - got.committed):
        note(f"event {eid}: engine failed, oracle committed")
    for eid in sorted((got.committed | got.failed) ^ (oracle.committed | oracle.failed)):
        note(f"event {eid}: present on one side only")
    for eid in sorted(set(got.outputs) | set(oracle.outputs)):
        a, b = got.outputs.get(eid), oracle.outputs.get(eid)
        if repr(a) != repr(b):
            note(f"event {eid} output: engine={a!r} oracle={b!r}")
    return VerifyReport(n == 0, diffs, n)
