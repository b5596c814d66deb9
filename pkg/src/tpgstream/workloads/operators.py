"""The transactional operator shared by all generated workloads."""

from __future__ import annotations

from ..core import FnKind, UdfRegistry
from ..runtime import (EventBlotter, OperatorSpec, default_post_process, request_nondet_write,
                       request_window_read, request_write)

GS_MOD = 1_000_003


def _sum_mod(vals, p):
    return (sum(vals) + p[0]) % GS_MOD


def _window_sum(per_key, p):
    return sum(sum(w) for w in per_key)


def build_registry(cost_us: float = 0.0) -> UdfRegistry:
    reg = UdfRegistry()
    reg.register(FnKind.VALUE, lambda v, p: v[0] + p[0], "add", cost_us=cost_us)
    reg.register(FnKind.VALUE, lambda v, p: v[0] - p[0], "sub", cost_us=cost_us)
    # balance after the transfer must stay non-negative; the sender's value is last
    reg.register(FnKind.CONDITION, lambda v, p: v[-1] >= p[0], "covers")
    reg.register(FnKind.VALUE, _sum_mod, "sum_mod", cost_us=cost_us)
    reg.register(FnKind.CONDITION, lambda v, p: not p[1], "not_poison")
    reg.register(FnKind.WINDOW_AGG, _window_sum, "window_sum", cost_us=cost_us)
    reg.register(FnKind.KEY_SELECTOR, lambda p, n: p[2], "pick_target")
    reg.register(FnKind.KEY_SELECTOR, lambda p, n: p[3], "pick_reads")
    reg.freeze()
    return reg


class MalformedEvent(ValueError):
    pass


def _ints(args, n=None):
    if n is not None and len(args) != n:
        raise MalformedEvent(f"expected {n} args, got {len(args)}")
    for a in args:
        if not isinstance(a, int) or isinstance(a, bool):
            raise MalformedEvent(f"non-integer arg {a!r}")
    return args


def make_operator(n_keys: int, cost_us: float = 0.0) -> OperatorSpec:
    reg = build_registry(cost_us)
    f = reg.by_name

    def key(k):
        if not 0 <= k < n_keys:
            raise MalformedEvent(f"key {k} outside the table")
        return k

    def pre_process(e):
        a = _ints(tuple(e.args))
        t = e.etype
        if t == "deposit":
            _ints(a, 2)
            p = {"acct": key(a[0]), "amount": a[1]}
        elif t == "transfer":
            _ints(a, 3)
            if a[0] == a[1]:
                raise MalformedEvent("transfer to self")
            p = {"sender": key(a[0]), "recver": key(a[1]), "amount": a[2]}
        elif t == "gs":
            poison, delta, l, r = a[:4]
            body = a[4:]
            if len(body) != l * r or l < 1 or r < 1:
                raise MalformedEvent("bad grep-sum layout")
            ops = []
            for i in range(l):
                chunk = body[i * r:(i + 1) * r]
                ops.append((key(chunk[0]), tuple(key(k) for k in chunk[1:])))
            if len({t for t, _ in ops}) != len(ops):
                raise MalformedEvent("grep-sum targets repeat")
            p = {"poison": poison, "delta": delta, "ops": ops}
        elif t == "gsw":
            size, n = a[:2]
            if len(a) != 2 + n or size <= 0:
                raise MalformedEvent("bad window layout")
            p = {"size": size, "keys": tuple(key(k) for k in a[2:])}
        elif t == "gsnd":
            poison, delta, target, n = a[:4]
            reads = a[4:4 + n]
            m = a[4 + n]
            cands = a[5 + n:]
            if len(cands) != m or len(reads) != n:
                raise MalformedEvent("bad non-deterministic layout")
            p = {"poison": poison, "delta": delta, "target": key(target),
                 "reads": tuple(key(k) for k in reads), "cands": tuple(key(k) for k in cands)}
        elif t == "tp":
            group, poison, delta, l = a[:4]
            keys = a[4:]
            if len(keys) != l or l < 1 or len(set(keys)) != l:
                raise MalformedEvent("bad toll layout")
            p = {"poison": poison, "delta": delta, "keys": tuple(key(k) for k in keys)}
        else:
            raise MalformedEvent(f"unknown event type {t!r}")
        return EventBlotter(e.event_id, p, e.group)

    def state_access(eb):
        p = eb.params
        if "acct" in p:
            request_write(eb, p["acct"], f("add"), params=(p["amount"],))
        elif "sender" in p:
            s, r, v = p["sender"], p["recver"], p["amount"]
            request_write(eb, s, f("sub"), cond=f("covers"), params=(v,))
            request_write(eb, r, f("add"), reads=(r, s), cond=f("covers"), params=(v,))
        elif "ops" in p:
            ops = p["ops"]
            for i, (t, reads) in enumerate(ops):
                last = i == len(ops) - 1
                request_write(eb, t, f("sum_mod"), reads=(t,) + reads,
                              cond=f("not_poison") if last else None,
                              params=(p["delta"], p["poison"] if last else 0))
        elif "size" in p:
            request_window_read(eb, p["keys"], p["size"], f("window_sum"))
        elif "target" in p:
            t, reads = p["target"], p["reads"]
            request_nondet_write(eb, f("pick_target"), f("sum_mod"), read_selector=f("pick_reads"),
                                 candidates=p["cands"], cond=f("not_poison"),
                                 params=(p["delta"], p["poison"], t, (t,) + reads))
        else:
            keys = p["keys"]
            for i, k in enumerate(keys):
                poison = p["poison"] if i == len(keys) - 1 else 0
                request_write(eb, k, f("add"), cond=f("not_poison"), params=(p["delta"], poison))

    return OperatorSpec(pre_process, state_access, default_post_process, reg, "tpgstream")
