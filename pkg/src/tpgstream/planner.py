"""Task precedence graph construction.

Phase 1 runs while events stream in: each transaction becomes one vertex per
operation, consecutive statements get LD edges, and every op is filed into
the per-key sorted lists (real entries for the key it writes or reads
deterministically, virtual entries for keys it reads indirectly or might
write non-deterministically).  Phase 2 runs at the punctuation and walks
each list once to produce TD/PD edges.

Edge rule for a list entry ``e``: take the nearest *source* entry ``p``
before it with a smaller timestamp.  Real entries are sources, and so are
the virtual entries of non-deterministic writes (they may land on the key).
A real ``e`` gets ``TD p -> e``; a virtual ``e`` gets ``PD p -> owner(e)``.
"""

from __future__ import annotations

import enum
import threading
from bisect import insort
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import kernels
from .core import (CoreError, Deterministic, MultiKey, NonDeterministic, Operation, OpKind,
                   StateTransaction, WindowRange)


class PlannerError(Exception):
    pass


class DependencyClass(enum.IntEnum):
    TD = 0
    PD = 1
    LD = 2


TD, PD, LD = DependencyClass.TD, DependencyClass.PD, DependencyClass.LD

# flag bits on sorted-list entries
VIRTUAL = 1
SOURCE = 2


class TPGVertex:
    """One operation in the graph, plus the executor's per-vertex state."""

    __slots__ = ("vid", "op", "out_edges", "in_edges", "unresolved", "fsm", "virtual_children",
                 "group", "txn", "order", "parents", "children", "gen", "cgen", "record",
                 "unit", "rank", "owner")

    def __init__(self, vid, op, group=0):
        self.vid = vid
        self.op = op
        self.group = group
        self.out_edges = []
        self.in_edges = []
        self.virtual_children = []
        self.unresolved = 0
        self.fsm = 0
        self.txn = -1
        self.order = -1
        self.parents = ()
        self.children = ()
        self.gen = 0
        self.cgen = 0
        self.record = None
        self.unit = None
        self.rank = 0
        self.owner = None

    @property
    def unresolved_parents(self):
        return self.unresolved

    def __repr__(self):
        return f"V{self.op.op_id}@{self.op.txn_ts}.{self.op.stmt_idx}"


class SortedList:
    """Entries ``(ts, stmt_idx, vid, flags)`` kept in (ts, stmt_idx) order."""

    __slots__ = ("key", "entries", "lock")

    def __init__(self, key):
        self.key = key
        self.entries = []
        self.lock = threading.Lock()

    def insert(self, ts, stmt, vid, flags):
        with self.lock:
            insort(self.entries, (ts, stmt, vid, flags))

    def __len__(self):
        return len(self.entries)


@dataclass
class Stratum:
    rank: int
    members: list


class TPG:
    def __init__(self, n_keys: int):
        if n_keys <= 0:
            raise PlannerError("TPG needs a positive key count")
        self.n_keys = n_keys
        self.vertices: list[TPGVertex] = []
        self.by_op: dict[int, int] = {}
        self.lists: dict[int, SortedList] = {}
        self.txns: list[StateTransaction] = []
        self.txn_vids: list[list[int]] = []
        self._ts_seen: set = set()
        self.virtual_ops: dict[int, list[Operation]] = {}
        self.n_td = self.n_pd = self.n_ld = 0
        self.order: list[int] = []
        self.strata: Optional[list[Stratum]] = None
        self.refined = False
        self._lock = threading.Lock()
        self._lists_lock = threading.Lock()
        self._next_virtual = -1

    def vertex(self, op_id) -> TPGVertex:
        return self.vertices[self.by_op[op_id]]

    def _list(self, key) -> SortedList:
        sl = self.lists.get(key)
        if sl is None:
            with self._lists_lock:
                sl = self.lists.get(key)
                if sl is None:
                    if not 0 <= key < self.n_keys:
                        raise PlannerError(f"key {key} outside the table")
                    sl = self.lists[key] = SortedList(key)
        return sl

    def edges(self, classes=(TD, PD, LD)) -> list[tuple[int, int, DependencyClass]]:
        out = []
        for v in self.vertices:
            for dst, cls in v.out_edges:
                if cls in classes:
                    out.append((v.op.op_id, self.vertices[dst].op.op_id, cls))
        return out

    def __len__(self):
        return len(self.vertices)


def decompose(txn: StateTransaction) -> list[Operation]:
    if not txn.ops:
        raise PlannerError("empty transaction")
    return list(txn.ops)


def _virtual_keys(tpg: TPG, op: Operation) -> tuple[list[int], bool]:
    """Keys that get a virtual entry for ``op`` and whether those entries are sources."""
    ks = op.keys
    if isinstance(ks, Deterministic):
        return [], False
    if isinstance(ks, MultiKey):
        return [k for k in ks.reads if k != ks.target], False
    if isinstance(ks, WindowRange):
        if ks.selector is None:
            keys = ks.reads
        else:
            keys = ks.candidates if ks.candidates is not None else range(tpg.n_keys)
        return [k for k in keys if k != ks.target], False
    if isinstance(ks, NonDeterministic):
        keys = ks.candidates if ks.candidates is not None else range(tpg.n_keys)
        return list(keys), op.kind == OpKind.WRITE
    raise PlannerError(f"unsupported key spec {ks!r}")


def insert_virtual_ops(tpg: TPG, op: Operation) -> list[Operation]:
    """Create and file the virtual reads of ``op``; returns them."""
    vid = tpg.by_op[op.op_id]
    keys, source = _virtual_keys(tpg, op)
    flags = VIRTUAL | (SOURCE if source else 0)
    vops = []
    with tpg._lock:
        first = tpg._next_virtual
        tpg._next_virtual -= len(keys)
    for i, k in enumerate(keys):
        sl = tpg._list(k)
        sl.insert(op.txn_ts, op.stmt_idx, vid, flags)
        vops.append(Operation(first - i, op.txn_ts, op.stmt_idx, OpKind.READ, Deterministic(k),
                              is_virtual=True, owner_op=op.op_id))
    v = tpg.vertices[vid]
    v.virtual_children = [vo.op_id for vo in vops]
    tpg.virtual_ops[op.op_id] = vops
    return vops


def phase1_insert(tpg: TPG, txn: StateTransaction):
    if tpg.refined:
        raise PlannerError("batch already refined")
    ops = decompose(txn)
    with tpg._lock:
        if txn.txn_ts in tpg._ts_seen:
            raise PlannerError(f"duplicate transaction timestamp {txn.txn_ts}")
        tpg._ts_seen.add(txn.txn_ts)
        tidx = len(tpg.txns)
        tpg.txns.append(txn)
        base = len(tpg.vertices)
        vids = list(range(base, base + len(ops)))
        for op in ops:
            if op.op_id in tpg.by_op:
                raise PlannerError(f"duplicate op id {op.op_id}")
            v = TPGVertex(len(tpg.vertices), op, txn.group)
            v.txn = tidx
            tpg.by_op[op.op_id] = v.vid
            tpg.vertices.append(v)
        tpg.txn_vids.append(vids)
    for a, b in zip(vids, vids[1:]):
        tpg.vertices[a].out_edges.append((b, LD))
        tpg.vertices[b].in_edges.append((a, LD))
    for op, vid in zip(ops, vids):
        tk = op.target_key()
        if tk is not None:
            tpg._list(tk).insert(op.txn_ts, op.stmt_idx, vid, SOURCE)
        if not isinstance(op.keys, Deterministic):
            insert_virtual_ops(tpg, op)


def _scan_list(entries) -> Iterable[tuple[int, int, DependencyClass]]:
    prev_src = -1
    group_ts = None
    group_src = -1
    for ts, _stmt, vid, flags in entries:
        if ts != group_ts:
            if group_src >= 0:
                prev_src = group_src
            group_ts = ts
            group_src = -1
        if prev_src >= 0:
            yield prev_src, vid, (PD if flags & VIRTUAL else TD)
        if flags & SOURCE:
            group_src = vid


def phase2_refine(tpg: TPG):
    """Derive TD/PD edges from the sorted lists and finalize counters."""
    if tpg.refined:
        raise PlannerError("batch already refined")
    edges: dict = {}
    for key in sorted(tpg.lists):
        for src, dst, cls in _scan_list(tpg.lists[key].entries):
            old = edges.get((src, dst))
            if old is None or (old == PD and cls == TD):
                edges[(src, dst)] = cls
    verts = tpg.vertices
    n_td = 0
    for (src, dst), cls in sorted(edges.items()):
        verts[src].out_edges.append((dst, cls))
        verts[dst].in_edges.append((src, cls))
        n_td += cls == TD
    tpg.n_td = n_td
    tpg.n_pd = len(edges) - n_td
    tpg.n_ld = sum(len(v) - 1 for v in tpg.txn_vids)
    for v in verts:
        v.parents = tuple(s for s, c in v.in_edges if c != LD)
        v.children = tuple(d for d, c in v.out_edges if c != LD)
        v.unresolved = len(v.parents)
    order = sorted(range(len(verts)), key=lambda i: verts[i].op.order)
    for pos, vid in enumerate(order):
        verts[vid].order = pos
    tpg.order = order
    tpg.refined = True


def _incident(tpg: TPG, op: Operation):
    vid = tpg.by_op[op.op_id]
    out = []
    for key in sorted(tpg.lists):
        for src, dst, cls in _scan_list(tpg.lists[key].entries):
            if dst == vid or src == vid:
                out.append((tpg.vertices[src].op.op_id, tpg.vertices[dst].op.op_id, cls))
    return out


def track_window(tpg: TPG, window_op: Operation):
    """Edges the adjacent-pair rule gives a window op.

    Two window ops on one key whose triggers are ordered always overlap in
    range once both lists are sorted, so the adjacent-pair rule covers the
    overlap condition; the nearest preceding writer per key is the edge.
    """
    if not isinstance(window_op.keys, WindowRange):
        raise PlannerError("not a window op")
    return _incident(tpg, window_op)


def track_nondet(tpg: TPG, nd_op: Operation):
    """PD edges into ``nd_op`` from each list it may touch, plus its outgoing edges."""
    if not isinstance(nd_op.keys, NonDeterministic):
        raise PlannerError("not a non-deterministic op")
    return _incident(tpg, nd_op)


def _csr(n, pairs):
    indptr = np.zeros(n + 1, dtype=np.int64)
    if not pairs:
        return indptr, np.zeros(0, dtype=np.int64)
    arr = np.asarray(pairs, dtype=np.int64)
    arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
    np.add.at(indptr, arr[:, 0] + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, arr[:, 1].copy()


def stratify(tpg: TPG) -> list[Stratum]:
    if not tpg.refined:
        raise PlannerError("stratify needs a refined graph")
    verts = tpg.vertices
    pairs = [(v.vid, c) for v in verts for c in v.children]
    indptr, indices = _csr(len(verts), pairs)
    ranks = kernels.dag_ranks(indptr, indices).tolist() if verts else []
    buckets: dict[int, list] = {}
    for vid in tpg.order:
        r = ranks[vid]
        verts[vid].rank = r
        buckets.setdefault(r, []).append(vid)
    tpg.strata = [Stratum(r, buckets[r]) for r in sorted(buckets)]
    return tpg.strata


def build(txns: Iterable[StateTransaction], n_keys: int) -> TPG:
    tpg = TPG(n_keys)
    for t in txns:
        phase1_insert(tpg, t)
    phase2_refine(tpg)
    return tpg


# -- text export ---------------------------------------------------------------

def _key_field(op: Operation) -> str:
    ks = op.keys
    if isinstance(ks, Deterministic):
        return str(ks.key)
    if isinstance(ks, MultiKey):
        return f"{ks.target}<" + ",".join(map(str, ks.reads))
    if isinstance(ks, NonDeterministic):
        return "nd"
    if isinstance(ks, WindowRange):
        return f"win{'' if ks.target is None else ks.target}"
    return "?"


def export_text(tpg: TPG) -> str:
    lines = []
    for vid in (tpg.order or range(len(tpg.vertices))):
        op = tpg.vertices[vid].op
        kind = "W" if op.kind == OpKind.WRITE else "R"
        lines.append(f"VERTEX {op.op_id} {op.txn_ts} {op.stmt_idx} {kind} {_key_field(op)}")
    for src, dst, cls in sorted(tpg.edges(), key=lambda e: (e[0], e[1], e[2])):
        lines.append(f"EDGE {src} {dst} {cls.name}")
    return "\n".join(lines) + "\n"


def parse_text(text: str):
    """Returns (vertices: {op_id: (ts, stmt, kind, key)}, edges: set of (src, dst, cls))."""
    verts, edges = {}, set()
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "VERTEX":
            verts[int(parts[1])] = (int(parts[2]), int(parts[3]), parts[4], parts[5])
        elif parts[0] == "EDGE":
            edges.add((int(parts[1]), int(parts[2]), parts[3]))
        else:
            raise PlannerError(f"bad line: {line!r}")
    return verts, edges


__all__ = ["DependencyClass", "TD", "PD", "LD", "TPGVertex", "SortedList", "Stratum", "TPG",
           "decompose", "phase1_insert", "insert_virtual_ops", "phase2_refine", "track_window",
           "track_nondet", "stratify", "build", "export_text", "parse_text", "PlannerError",
           "CoreError"]
