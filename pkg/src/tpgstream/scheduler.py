"""Strategy selection and work partitioning for one batch.

A decision picks a point in three binary dimensions: exploration
(structured ``S`` / unstructured ``NS``), unit granularity (``FINE`` /
``COARSE``) and abort handling (``EAGER`` / ``LAZY``).  ``decide`` maps
measured graph properties onto that space with threshold rules; the
thresholds live in a key=value config file shipped with the package.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from typing import Iterable, Optional

import numpy as np

from . import kernels
from .planner import TPG, _csr


class SchedulerError(Exception):
    pass


S, NS = "S", "NS"
BFS, DFS = "BFS", "DFS"
FINE, COARSE = "FINE", "COARSE"
EAGER, LAZY = "EAGER", "LAZY"


@dataclass(frozen=True)
class SchedulingDecision:
    explore: str = S
    granularity: str = FINE
    abort: str = EAGER
    explore_variant: str = DFS

    def __post_init__(self):
        if self.explore not in (S, NS) or self.granularity not in (FINE, COARSE) \
                or self.abort not in (EAGER, LAZY) or self.explore_variant not in (BFS, DFS):
            raise SchedulerError(f"invalid decision {self!r}")

    def short(self) -> str:
        return f"{self.explore}/{self.granularity[0]}/{self.abort[0]}"

    @classmethod
    def parse(cls, text: str, variant: str = DFS) -> "SchedulingDecision":
        """Parse ``S/C/E``-style strings; ``S`` may be written ``BFS`` or ``DFS``."""
        parts = text.strip().upper().split("/")
        if len(parts) != 3:
            raise SchedulerError(f"strategy must look like S/F/E, got {text!r}")
        ex, gr, ab = parts
        if ex in (BFS, DFS):
            ex, variant = S, ex
        gran = {"F": FINE, "FINE": FINE, "C": COARSE, "COARSE": COARSE}.get(gr)
        abort = {"E": EAGER, "EAGER": EAGER, "L": LAZY, "LAZY": LAZY}.get(ab)
        if ex not in (S, NS) or gran is None or abort is None:
            raise SchedulerError(f"bad strategy {text!r}")
        return cls(ex, gran, abort, variant)


ALL_DECISIONS = tuple(SchedulingDecision(e, g, a) for e in (S, NS) for g in (FINE, COARSE)
                      for a in (EAGER, LAZY))


@dataclass(frozen=True)
class TPGProperties:
    avg_complexity: float = 0.0
    degree_skew: float = 1.0
    abort_ratio: float = 0.0
    n_ld: int = 0
    n_td: int = 0
    n_pd: int = 0
    has_cycles_coarse: bool = False
    n_vertices: int = 0

    def __post_init__(self):
        if min(self.n_ld, self.n_td, self.n_pd) < 0:
            raise SchedulerError("edge counts must be >= 0")
        if not 0.0 <= self.abort_ratio <= 1.0:
            raise SchedulerError("abort_ratio must lie in [0, 1]")

    def brief(self) -> str:
        return (f"ld={self.n_ld},td={self.n_td},pd={self.n_pd},skew={self.degree_skew:.2f},"
                f"cx={self.avg_complexity:g},ab={self.abort_ratio:.2f},"
                f"cyc={int(self.has_cycles_coarse)},n={self.n_vertices}")


@dataclass(frozen=True)
class DecisionThresholds:
    dep_count_high: float
    skew_low: float
    pd_low: float
    complexity_low: float
    abort_high: float
    explore_variant: str = DFS

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "explore_variant":
                if v not in (BFS, DFS):
                    raise SchedulerError("explore_variant must be BFS or DFS")
            elif not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise SchedulerError(f"threshold {f.name} must be finite and >= 0")

    @classmethod
    def from_text(cls, text: str) -> "DecisionThresholds":
        vals = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchedulerError(f"bad threshold line {raw!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            vals[k] = v.strip('"').upper() if k == "explore_variant" else float(v)
        known = {f.name for f in fields(cls)}
        unknown = set(vals) - known
        if unknown:
            raise SchedulerError(f"unknown threshold keys {sorted(unknown)}")
        try:
            return cls(**vals)
        except TypeError as e:
            raise SchedulerError(str(e)) from None

    @classmethod
    def load(cls, path) -> "DecisionThresholds":
        with open(path) as fh:
            return cls.from_text(fh.read())

    @classmethod
    def default(cls) -> "DecisionThresholds":
        text = resources.files("tpgstream").joinpath("data/thresholds.conf").read_text()
        return cls.from_text(text)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def decide(props: TPGProperties, th: DecisionThresholds) -> SchedulingDecision:
    deps = props.n_ld + props.n_td + props.n_pd
    explore = S if (deps >= th.dep_count_high and props.degree_skew <= th.skew_low) else NS
    coarse = (not props.has_cycles_coarse and props.n_td >= th.dep_count_high
              and props.n_pd <= th.pd_low)
    lazy = props.avg_complexity <= th.complexity_low and props.abort_ratio >= th.abort_high
    return SchedulingDecision(explore, COARSE if coarse else FINE, LAZY if lazy else EAGER,
                              th.explore_variant)


def decide_nested(groups: dict, th: DecisionThresholds) -> dict:
    return {g: decide(p, th) for g, p in sorted(groups.items())}


def trace_line(batch: int, group, decision: SchedulingDecision,
               props: Optional[TPGProperties] = None) -> str:
    variant = decision.explore_variant if decision.explore == S else "-"
    p = props.brief() if props is not None else ""
    return (f"batch={batch} group={group} explore={decision.explore}/{variant} "
            f"gran={decision.granularity[0]} abort={decision.abort[0]} props=({p})")


# -- units -----------------------------------------------------------------------

@dataclass(eq=False)
class SchedulingUnit:
    unit_id: int
    members: list
    remaining_index: int = 0
    rank: int = 0
    group: int = 0
    owner: int = -1
    running: bool = False
    queued: bool = False

    def __len__(self):
        return len(self.members)

    def __repr__(self):
        return f"Unit({self.unit_id}, n={len(self.members)})"


def _group_vids(tpg: TPG, vids):
    return tpg.order if vids is None else sorted(vids, key=lambda v: tpg.vertices[v].order)


def chain_units(tpg: TPG, vids=None) -> list[SchedulingUnit]:
    """One unit per key list (real entries only); ops with no deterministic key are singletons."""
    by_key: dict = {}
    units = []
    for vid in _group_vids(tpg, vids):
        k = tpg.vertices[vid].op.target_key()
        if k is None:
            units.append(SchedulingUnit(len(units), [vid]))
            continue
        u = by_key.get(k)
        if u is None:
            u = by_key[k] = SchedulingUnit(len(units), [])
            units.append(u)
        u.members.append(vid)
    return units


def inter_unit_edges(tpg: TPG, units) -> set:
    where = [-1] * len(tpg.vertices)
    for u in units:
        uid = u.unit_id
        for vid in u.members:
            where[vid] = uid
    verts = tpg.vertices
    edges = set()
    add = edges.add
    for u in units:
        uid = u.unit_id
        for vid in u.members:
            for c in verts[vid].children:
                cu = where[c]
                if cu >= 0 and cu != uid:
                    add((uid, cu))
    return edges


def detect_cycles(units, edges, tpg: Optional[TPG] = None) -> list[SchedulingUnit]:
    """Merge strongly connected units; members of a merged unit follow ts order."""
    units = list(units)
    n = len(units)
    index = {u.unit_id: i for i, u in enumerate(units)}
    pairs = [(index[a], index[b]) for a, b in edges]
    indptr, indices = _csr(n, pairs)
    labels = kernels.scc_labels(indptr, indices).tolist() if n else []
    comps: dict[int, list] = {}
    for i, lab in enumerate(labels):
        comps.setdefault(lab, []).append(units[i])
    out = []
    # keep the original relative order of the first unit in each component
    for lab in sorted(comps, key=lambda c: min(index[u.unit_id] for u in comps[c])):
        group = comps[lab]
        if len(group) == 1:
            u = group[0]
            out.append(SchedulingUnit(len(out), list(u.members), group=u.group))
            continue
        members = [m for u in group for m in u.members]
        if tpg is not None:
            members.sort(key=lambda v: tpg.vertices[v].order)
        else:
            members.sort()
        out.append(SchedulingUnit(len(out), members, group=group[0].group))
    return out


def has_unit_cycles(units, edges) -> bool:
    n = len(units)
    if not edges:
        return False
    index = {u.unit_id: i for i, u in enumerate(units)}
    indptr, indices = _csr(n, [(index[a], index[b]) for a, b in edges])
    labels = kernels.scc_labels(indptr, indices)
    return len(np.unique(labels)) < n


def form_units(tpg: TPG, granularity: str, vids=None) -> list[SchedulingUnit]:
    if granularity == FINE:
        return [SchedulingUnit(i, [vid]) for i, vid in enumerate(_group_vids(tpg, vids))]
    if granularity != COARSE:
        raise SchedulerError(f"unknown granularity {granularity!r}")
    units = chain_units(tpg, vids)
    return detect_cycles(units, inter_unit_edges(tpg, units), tpg)


def unit_ranks(tpg: TPG, units, edges=None) -> list[int]:
    """Longest-path rank of each unit in the (acyclic) unit graph."""
    if edges is None:
        edges = inter_unit_edges(tpg, units)
    index = {u.unit_id: i for i, u in enumerate(units)}
    indptr, indices = _csr(len(units), [(index[a], index[b]) for a, b in edges])
    ranks = kernels.dag_ranks(indptr, indices).tolist() if units else []
    for u, r in zip(units, ranks):
        u.rank = r
    return ranks


def measure_properties(tpg: TPG, abort_estimate: float = 0.0, registry=None,
                       vids=None) -> TPGProperties:
    """Graph statistics for ``vids`` (whole graph when None).

    Vertex degree counts every same-key dependency of the unreduced relation
    (the stored graph keeps only adjacent pairs per key, which flattens
    degrees along hot chains).
    """
    verts = tpg.vertices
    sel = None if vids is None else set(vids)
    members = range(len(verts)) if sel is None else sel
    n = len(members)
    if n == 0:
        return TPGProperties(abort_ratio=min(max(abort_estimate, 0.0), 1.0))
    n_td = n_pd = n_ld = 0
    for vid in members:
        for dst, cls in verts[vid].out_edges:
            if sel is not None and dst not in sel:
                continue
            if cls == 0:
                n_td += 1
            elif cls == 1:
                n_pd += 1
            else:
                n_ld += 1
    deg = {}
    for sl in tpg.lists.values():
        ent = sl.entries if sel is None else [e for e in sl.entries if e[2] in sel]
        m = len(ent)
        if m > 1:
            for e in ent:
                deg[e[2]] = deg.get(e[2], 0) + m - 1
    total = sum(deg.values())
    skew = (max(deg.values()) * n / total) if total else 1.0
    cx = 0.0
    if registry is not None:
        cx = sum(registry.cost_us(verts[v].op.value_fn) for v in members) / n
    chains = chain_units(tpg, None if sel is None else sel)
    cyc = has_unit_cycles(chains, inter_unit_edges(tpg, chains))
    return TPGProperties(avg_complexity=cx, degree_skew=skew,
                         abort_ratio=min(max(abort_estimate, 0.0), 1.0),
                         n_ld=n_ld, n_td=n_td, n_pd=n_pd, has_cycles_coarse=cyc, n_vertices=n)


# -- assignment ----------------------------------------------------------------

@dataclass
class WorkPlan:
    mode: str
    n_threads: int
    strata: list = field(default_factory=list)        # list of unit lists, by rank
    per_thread: list = field(default_factory=list)    # NS: units; DFS: list of unit lists per stratum

    def thread_load(self) -> list[int]:
        if self.mode == NS:
            return [sum(len(u) for u in us) for us in self.per_thread]
        if self.mode == DFS:
            return [sum(len(u) for s in per for u in s) for per in self.per_thread]
        return []


def _lpt(units, n_threads):
    bins = [[] for _ in range(n_threads)]
    heap = [(0, i) for i in range(n_threads)]
    for u in sorted(units, key=lambda u: (-len(u.members), u.unit_id)):
        load, t = heapq.heappop(heap)
        bins[t].append(u)
        heapq.heappush(heap, (load + len(u.members), t))
    for b in bins:
        b.sort(key=lambda u: u.unit_id)
    return bins


def assign(units, n_threads: int, mode: str, tpg: Optional[TPG] = None) -> WorkPlan:
    """Distribute units over threads.

    ``mode`` is ``BFS`` (shared pool per stratum), ``DFS`` (largest-first
    pre-assignment inside every stratum) or ``NS`` (largest-first over the
    whole unit set).  Unit ranks must already be set for BFS/DFS.
    """
    if n_threads < 1:
        raise SchedulerError("need at least one thread")
    units = list(units)
    if mode == NS:
        return WorkPlan(NS, n_threads, per_thread=_lpt(units, n_threads))
    by_rank: dict[int, list] = {}
    for u in units:
        by_rank.setdefault(u.rank, []).append(u)
    strata = [by_rank[r] for r in sorted(by_rank)]
    if mode == BFS:
        return WorkPlan(BFS, n_threads, strata=strata)
    if mode == DFS:
        per = [[] for _ in range(n_threads)]
        for s in strata:
            bins = _lpt(s, n_threads)
            for t in range(n_threads):
                per[t].append(bins[t])
        return WorkPlan(DFS, n_threads, strata=strata, per_thread=per)
    raise SchedulerError(f"unknown assignment mode {mode!r}")


def plan_mode(decision: SchedulingDecision) -> str:
    return decision.explore_variant if decision.explore == S else NS


__all__ = ["S", "NS", "BFS", "DFS", "FINE", "COARSE", "EAGER", "LAZY", "SchedulingDecision",
           "ALL_DECISIONS", "TPGProperties", "DecisionThresholds", "decide", "decide_nested",
           "trace_line", "SchedulingUnit", "form_units", "chain_units", "inter_unit_edges",
           "detect_cycles", "unit_ranks", "measure_properties", "WorkPlan", "assign", "plan_mode",
           "SchedulerError", "replace"]
