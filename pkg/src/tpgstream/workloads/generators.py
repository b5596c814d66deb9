"""Event generators for the ledger, grep-sum and toll workloads.

Every generator is a pure function of its knobs: the same seed yields the
same event list.  Event timestamps run 1..N in generation order and double
as event ids; arrival order is a separate concern (``shuffle_arrival``).

Event argument layouts (all ints):

  deposit   acct amount
  transfer  src dst amount
  gs        poison delta l r (target reads[r-1])*l
  gsw       size n keys[n]
  gsnd      poison delta target n reads[n] m cands[m]
  tp        group poison delta l keys[l]
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np

from ..runtime import Event


class WorkloadError(Exception):
    pass


# amount that no balance in the ledger can cover; used for injected aborts
OVERDRAFT = 10 ** 15


@dataclass(frozen=True)
class WorkloadKnobs:
    theta: float = 0.2
    abort_ratio: float = 0.01
    txn_len: int = 1
    udf_cost: float = 10.0
    multi_access: int = 2
    interval: int = 10240
    key_space: int = 10240
    seed: int = 0
    n_events: int = 10240
    # ledger
    transfer_ratio: float = 0.5
    balance: int = 10 ** 9
    amount_max: int = 10
    # windowed grep-sum
    window: int = 1000
    period: int = 100
    window_keys: int = 100
    # non-deterministic grep-sum
    nondet_ratio: float = 1.0
    candidates: int = 8

    def __post_init__(self):
        def need(ok, msg):
            if not ok:
                raise WorkloadError(msg)
        need(0.0 <= self.theta <= 1.0, "theta must lie in [0, 1]")
        need(0.0 <= self.abort_ratio <= 0.9, "abort ratio must lie in [0, 0.9]")
        need(1 <= self.txn_len <= 10, "txn_len must lie in [1, 10]")
        need(0.0 <= self.udf_cost <= 100.0, "udf cost must lie in [0, 100] us")
        need(1 <= self.multi_access <= 10, "multi_access must lie in [1, 10]")
        need(self.interval >= 1, "punctuation interval must be >= 1")
        need(self.key_space >= 1, "key_space must be >= 1")
        need(self.n_events >= 0, "n_events must be >= 0")
        need(0.0 <= self.transfer_ratio <= 1.0, "transfer ratio must lie in [0, 1]")
        need(self.window >= 1 and self.period >= 1 and self.window_keys >= 1,
             "window size, period and key count must be >= 1")
        need(0.0 <= self.nondet_ratio <= 1.0, "nondet ratio must lie in [0, 1]")
        need(self.candidates >= 1, "candidate count must be >= 1")
        need(self.balance >= 0 and self.amount_max >= 1, "bad ledger amounts")

    def with_(self, **kw) -> "WorkloadKnobs":
        return replace(self, **kw)

    def header(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def knobs_from_dict(d: dict) -> WorkloadKnobs:
    kinds = {f.name: f.type for f in fields(WorkloadKnobs)}
    kw = {}
    for k, v in d.items():
        if k not in kinds:
            raise WorkloadError(f"unknown knob {k!r}")
        default = getattr(WorkloadKnobs, k)
        kw[k] = type(default)(float(v)) if isinstance(default, int) else float(v)
    return WorkloadKnobs(**kw)


# -- zipf -------------------------------------------------------------------------

@lru_cache(maxsize=256)
def _zipf_cdf(theta: float, n: int) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -theta
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return cdf


def zipf_keys(theta: float, key_space: int, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` keys with P(key k) proportional to (k+1)^-theta."""
    if key_space < 1:
        raise WorkloadError("key_space must be >= 1")
    if key_space == 1:
        return np.zeros(size, dtype=np.int64)
    cdf = _zipf_cdf(round(float(theta), 6), key_space)
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, key_space - 1).astype(np.int64)


def zipf_key(theta: float, key_space: int, rng: np.random.Generator) -> int:
    return int(zipf_keys(theta, key_space, rng, 1)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _distinct(theta, key_space, rng, n, exclude=()):
    """n distinct zipf keys (fewer if the key space is too small)."""
    n = min(n, key_space - len(set(exclude)))
    out = []
    seen = set(exclude)
    while len(out) < n:
        for k in zipf_keys(theta, key_space, rng, 2 * (n - len(out)) + 4).tolist():
            if k not in seen:
                seen.add(k)
                out.append(k)
                if len(out) == n:
                    break
        if theta > 0 and len(out) < n:
            theta = 0.0     # hot heads can starve the draw; fall back to uniform
    return out


# -- ledger -----------------------------------------------------------------------

def _sl_event(ts, rng, knobs, theta, abort, transfer_ratio):
    u = rng.random()
    K = knobs.key_space
    if u < abort and K > 1:
        src, dst = _distinct(theta, K, rng, 2)
        return Event(ts, ts, "transfer", (src, dst, OVERDRAFT))
    amt = int(rng.integers(1, knobs.amount_max + 1))
    if rng.random() < transfer_ratio and K > 1:
        src, dst = _distinct(theta, K, rng, 2)
        return Event(ts, ts, "transfer", (src, dst, amt))
    return Event(ts, ts, "deposit", (zipf_key(theta, K, rng), amt))


def gen_sl(knobs: WorkloadKnobs) -> list[Event]:
    """Deposits (1 write) and transfers (2 guarded writes).

    A fraction ``abort_ratio`` of events are transfers for an amount no
    balance covers, so they always abort.  ``txn_len`` and ``multi_access``
    are fixed by the transaction shapes and ignored.
    """
    rng = make_rng(knobs.seed)
    return [_sl_event(ts, rng, knobs, knobs.theta, knobs.abort_ratio, knobs.transfer_ratio)
            for ts in range(1, knobs.n_events + 1)]


# -- grep-sum ---------------------------------------------------------------------

def _gs_args(rng, knobs, theta, poison):
    K = knobs.key_space
    l = min(knobs.txn_len, K)
    r = min(knobs.multi_access, K)
    targets = _distinct(theta, K, rng, l)
    args = [int(poison), int(rng.integers(1, 1000)), len(targets), r]
    for t in targets:
        reads = _distinct(theta, K, rng, r - 1, exclude=(t,))
        args.append(t)
        args.extend(reads)
    return tuple(args)


def gen_gs(knobs: WorkloadKnobs, variant: str = "plain") -> list[Event]:
    """Grep-sum: each op writes ``(sum of r keys + delta) mod M`` to its target.

    ``window`` interleaves a window-sum reader every ``period`` events;
    ``nondet`` makes a fraction of events pick keys through selector UDFs over
    a declared candidate set.
    """
    if variant not in ("plain", "window", "nondet"):
        raise WorkloadError(f"unknown grep-sum variant {variant!r}")
    rng = make_rng(knobs.seed)
    K = knobs.key_space
    out = []
    for ts in range(1, knobs.n_events + 1):
        if variant == "window" and ts % knobs.period == 0:
            n = min(knobs.window_keys, K)
            keys = sorted(rng.choice(K, size=n, replace=False).tolist())
            out.append(Event(ts, ts, "gsw", (knobs.window, n, *keys)))
            continue
        poison = rng.random() < knobs.abort_ratio
        if variant == "nondet" and knobs.nondet_ratio > 0 and rng.random() < knobs.nondet_ratio:
            target = zipf_key(knobs.theta, K, rng)
            reads = _distinct(knobs.theta, K, rng, knobs.multi_access - 1, exclude=(target,))
            extra = _distinct(knobs.theta, K, rng, knobs.candidates)
            cands = sorted({target, *reads, *extra})
            out.append(Event(ts, ts, "gsnd", (int(poison), int(rng.integers(1, 1000)), target,
                                              len(reads), *reads, len(cands), *cands)))
            continue
        out.append(Event(ts, ts, "gs", _gs_args(rng, knobs, knobs.theta, poison)))
    return out


# -- toll processing ------------------------------------------------------------------

def gen_tp(knobs: WorkloadKnobs, hot_fraction: float = 0.5) -> list[Event]:
    """Two interleaved groups on disjoint halves of the key space.

    Group 1 uses the knobs' skew and abort ratio; group 2 is uniform and never
    aborts.  ``hot_fraction`` is the share of group-1 events.
    """
    if knobs.key_space < 2:
        raise WorkloadError("toll processing needs at least two keys")
    rng = make_rng(knobs.seed)
    half = knobs.key_space // 2
    out = []
    for ts in range(1, knobs.n_events + 1):
        g1 = rng.random() < hot_fraction
        if g1:
            space, base, theta, abort = half, 0, knobs.theta, knobs.abort_ratio
        else:
            space, base, theta, abort = knobs.key_space - half, half, 0.0, 0.0
        poison = rng.random() < abort
        keys = [base + k for k in _distinct(theta, space, rng, min(knobs.txn_len, space))]
        group = 1 if g1 else 2
        out.append(Event(ts, ts, "tp", (group, int(poison), int(rng.integers(1, 100)),
                                        len(keys), *keys), group=group))
    return out


# -- dynamic ---------------------------------------------------------------------

RAMPABLE = {"theta": "theta", "abort": "abort_ratio", "transfer": "transfer_ratio"}


@dataclass(frozen=True)
class PhaseSpec:
    length: int
    trend: dict = field(default_factory=dict)     # knob -> (start, end)

    def __post_init__(self):
        if self.length < 1:
            raise WorkloadError("phase length must be >= 1")
        for k, (a, b) in self.trend.items():
            if k not in RAMPABLE:
                raise WorkloadError(f"knob {k!r} cannot be ramped")
            lo, hi = (0.0, 0.9) if k == "abort" else (0.0, 1.0)
            if not (lo <= a <= hi and lo <= b <= hi):
                raise WorkloadError(f"ramp for {k} leaves [{lo}, {hi}]")

    def at(self, i: int, knob: str, default: float) -> float:
        if knob not in self.trend:
            return default
        a, b = self.trend[knob]
        if self.length == 1:
            return a
        return a + (b - a) * i / (self.length - 1)


def gen_dynamic(phases: list, base: WorkloadKnobs, workload: str = "sl") -> list[Event]:
    """Concatenated phases with knobs ramped linearly per event."""
    if not phases:
        raise WorkloadError("need at least one phase")
    if workload not in ("sl", "gs"):
        raise WorkloadError("dynamic scripts drive the sl or gs workload")
    rng = make_rng(base.seed)
    out = []
    ts = 0
    for ph in phases:
        for i in range(ph.length):
            ts += 1
            theta = round(ph.at(i, "theta", base.theta), 2)
            abort = ph.at(i, "abort", base.abort_ratio)
            if workload == "sl":
                tr = ph.at(i, "transfer", base.transfer_ratio)
                out.append(_sl_event(ts, rng, base, theta, abort, tr))
            else:
                poison = rng.random() < abort
                out.append(Event(ts, ts, "gs", _gs_args(rng, base, theta, poison)))
    return out


def parse_dynamic(text: str) -> tuple[list, WorkloadKnobs, str]:
    """``key = value`` base lines plus ``phase length=N knob=a:b ...`` lines."""
    base, phases, workload = {}, [], "sl"
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("phase"):
            kv = dict(tok.split("=", 1) for tok in line.split()[1:])
            try:
                length = int(kv.pop("length"))
            except KeyError:
                raise WorkloadError(f"phase without length: {raw!r}") from None
            trend = {}
            for k, v in kv.items():
                a, _, b = v.partition(":")
                trend[k] = (float(a), float(b or a))
            phases.append(PhaseSpec(length, trend))
            continue
        if "=" not in line:
            raise WorkloadError(f"bad script line {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k == "workload":
            workload = v
        else:
            base[k] = v
    knobs = knobs_from_dict(base)
    total = sum(p.length for p in phases)
    return phases, knobs.with_(n_events=total), workload


# -- arrival order ---------------------------------------------------------------

def shuffle_arrival(stream, window: float, rng: np.random.Generator) -> list:
    """Permute events with bounded displacement; punctuations stay in place.

    Each event gets sort key ``index + U[0, window]``, so no event moves more
    than ``window`` positions.  Timestamps are untouched.
    """
    if window < 0:
        raise WorkloadError("window must be >= 0")
    out, seg = [], []

    def flush():
        if window > 0 and len(seg) > 1:
            keys = np.arange(len(seg)) + rng.uniform(0.0, window, len(seg))
            order = np.argsort(keys, kind="stable")
            out.extend(seg[i] for i in order.tolist())
        else:
            out.extend(seg)
        seg.clear()

    for item in stream:
        if isinstance(item, Event):
            seg.append(item)
        else:
            flush()
            out.append(item)
    flush()
    n = 0
    res = []
    for item in out:
        if isinstance(item, Event):
            item = replace(item, arrival_index=n)
            n += 1
        res.append(item)
    return res


def measured_abort_fraction(events) -> float:
    """Share of events generated as guaranteed aborts."""
    n = bad = 0
    for e in events:
        n += 1
        if e.etype == "transfer" and e.args[2] == OVERDRAFT:
            bad += 1
        elif e.etype in ("gs", "gsnd"):
            bad += e.args[0]
        elif e.etype == "tp":
            bad += e.args[1]
    return bad / n if n else 0.0
