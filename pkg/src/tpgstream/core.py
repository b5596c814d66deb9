"""Domain types shared by every layer of the engine.

Keys and timestamps are plain non-negative ints.  Everything here is
immutable once built, so instances can be handed to worker threads freely.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence, Union

Key = int
Timestamp = int


class CoreError(Exception):
    pass


class UnknownFunction(CoreError):
    pass


class OpKind(enum.IntEnum):
    READ = 0
    WRITE = 1


class FnKind(enum.IntEnum):
    VALUE = 0
    CONDITION = 1
    WINDOW_AGG = 2
    KEY_SELECTOR = 3


@dataclass(frozen=True, slots=True)
class FunctionRef:
    id: int
    arity: int
    kind: FnKind


class UdfRegistry:
    """Write-once table of user functions.

    Calling conventions by kind:
      VALUE(values, params) -> int
      CONDITION(values, params) -> bool
      WINDOW_AGG(per_key_values, params) -> int
      KEY_SELECTOR(params, n_keys) -> key or sequence of keys
    ``cost_us`` is the busy-wait charged each time the function runs.
    """

    def __init__(self):
        self._bodies: list[Callable] = []
        self._refs: list[FunctionRef] = []
        self._costs: list[float] = []
        self._names: dict[str, int] = {}
        self._frozen = False

    def register(self, kind: FnKind, body: Callable, name: Optional[str] = None,
                 arity: int = -1, cost_us: float = 0.0) -> FunctionRef:
        if self._frozen:
            raise CoreError("registry is frozen")
        if not callable(body):
            raise CoreError("udf body must be callable")
        if cost_us < 0:
            raise CoreError("udf cost must be >= 0")
        if name is not None:
            if name in self._names:
                raise CoreError(f"duplicate udf registration: {name!r}")
            self._names[name] = len(self._bodies)
        ref = FunctionRef(len(self._bodies), arity, FnKind(kind))
        self._bodies.append(body)
        self._refs.append(ref)
        self._costs.append(float(cost_us))
        return ref

    def freeze(self):
        self._frozen = True

    def _index(self, ref: Union[FunctionRef, int]) -> int:
        idx = ref.id if isinstance(ref, FunctionRef) else ref
        if not isinstance(idx, int) or idx < 0 or idx >= len(self._bodies):
            raise UnknownFunction(f"unregistered function id {idx!r}")
        if isinstance(ref, FunctionRef) and self._refs[idx] != ref:
            raise UnknownFunction(f"stale function ref {ref!r}")
        return idx

    def resolve(self, ref: Union[FunctionRef, int]) -> Callable:
        return self._bodies[self._index(ref)]

    def ref(self, ref_id: int) -> FunctionRef:
        return self._refs[self._index(ref_id)]

    def by_name(self, name: str) -> FunctionRef:
        try:
            return self._refs[self._names[name]]
        except KeyError:
            raise UnknownFunction(name) from None

    def cost_us(self, ref: Optional[FunctionRef]) -> float:
        if ref is None:
            return 0.0
        return self._costs[self._index(ref)]

    def __contains__(self, ref) -> bool:
        try:
            self._index(ref)
        except UnknownFunction:
            return False
        return True

    def __len__(self):
        return len(self._bodies)


_default_registry = UdfRegistry()


def register_udf(kind: FnKind, body: Callable, registry: Optional[UdfRegistry] = None,
                 **kw) -> FunctionRef:
    """Register ``body`` in ``registry`` (the module default if omitted)."""
    reg = _default_registry if registry is None else registry
    return reg.register(kind, body, **kw)


# -- key specifications ------------------------------------------------------

def _check_key(k):
    if not isinstance(k, int) or isinstance(k, bool) or k < 0:
        raise CoreError(f"keys are non-negative ints, got {k!r}")


def _check_keys(keys, what):
    keys = tuple(keys)
    for k in keys:
        _check_key(k)
    if len(set(keys)) != len(keys):
        raise CoreError(f"{what} contains duplicate keys")
    return keys


@dataclass(frozen=True, slots=True)
class Deterministic:
    key: Key

    def __post_init__(self):
        _check_key(self.key)


@dataclass(frozen=True, slots=True)
class MultiKey:
    target: Key
    reads: tuple

    def __post_init__(self):
        _check_key(self.target)
        object.__setattr__(self, "reads", _check_keys(self.reads, "read-key list"))
        if not self.reads:
            raise CoreError("MultiKey read-key list must be non-empty")


@dataclass(frozen=True, slots=True)
class NonDeterministic:
    """Target chosen at execution time by ``selector``.

    ``read_selector`` (optional) picks the keys whose values feed the value
    function; without it the op reads its own resolved target.
    ``candidates`` is the declared set the selectors may return; ``None``
    means any key of the table.
    """
    selector: FunctionRef
    read_selector: Optional[FunctionRef] = None
    candidates: Optional[tuple] = None

    def __post_init__(self):
        if self.selector.kind != FnKind.KEY_SELECTOR:
            raise CoreError("selector must be a key-selector function")
        if self.read_selector is not None and self.read_selector.kind != FnKind.KEY_SELECTOR:
            raise CoreError("read_selector must be a key-selector function")
        if self.candidates is not None:
            cands = _check_keys(self.candidates, "candidate set")
            if not cands:
                raise CoreError("candidate set must be non-empty")
            object.__setattr__(self, "candidates", tuple(sorted(cands)))


@dataclass(frozen=True, slots=True)
class WindowRange:
    """Window over ``[trigger - size, trigger)`` of ``reads`` (or selector keys).

    ``target`` turns the op into a window write.
    """
    size: int
    trigger: Timestamp
    reads: tuple = ()
    selector: Optional[FunctionRef] = None
    candidates: Optional[tuple] = None
    target: Optional[Key] = None

    def __post_init__(self):
        if not isinstance(self.size, int) or self.size <= 0:
            raise CoreError("window size must be > 0")
        object.__setattr__(self, "reads", _check_keys(self.reads, "window keys"))
        if self.selector is None and not self.reads:
            raise CoreError("window needs read keys or a key selector")
        if self.selector is not None and self.selector.kind != FnKind.KEY_SELECTOR:
            raise CoreError("window selector must be a key-selector function")
        if self.candidates is not None:
            object.__setattr__(self, "candidates",
                               tuple(sorted(_check_keys(self.candidates, "candidate set"))))
        if self.target is not None:
            _check_key(self.target)


KeySpec = Union[Deterministic, MultiKey, NonDeterministic, WindowRange]


@dataclass(frozen=True, slots=True)
class Operation:
    op_id: int
    txn_ts: Timestamp
    stmt_idx: int
    kind: OpKind
    keys: Any
    value_fn: Optional[FunctionRef] = None
    cond_fn: Optional[FunctionRef] = None
    params: tuple = ()
    is_virtual: bool = False
    owner_op: Optional[int] = None

    def __post_init__(self):
        if self.is_virtual:
            if self.owner_op is None or self.kind != OpKind.READ:
                raise CoreError("virtual ops are reads with an owner")
        elif self.owner_op is not None:
            raise CoreError("owner_op is only set on virtual ops")
        if self.txn_ts < 0 or self.stmt_idx < 0:
            raise CoreError("negative timestamp or statement index")
        if not isinstance(self.keys, (Deterministic, MultiKey, NonDeterministic, WindowRange)):
            raise CoreError(f"bad key spec {self.keys!r}")
        if self.kind == OpKind.WRITE and self.value_fn is None:
            raise CoreError("writes need a value function")
        if isinstance(self.keys, WindowRange):
            if self.value_fn is None or self.value_fn.kind != FnKind.WINDOW_AGG:
                raise CoreError("window ops need a window aggregate")
            if (self.keys.target is not None) != (self.kind == OpKind.WRITE):
                raise CoreError("window writes carry a target, window reads do not")
        if isinstance(self.keys, MultiKey) and self.kind != OpKind.WRITE:
            raise CoreError("MultiKey ops are writes")
        if self.cond_fn is not None and self.cond_fn.kind != FnKind.CONDITION:
            raise CoreError("cond_fn must be a condition function")

    @property
    def order(self):
        return (self.txn_ts, self.stmt_idx)

    def target_key(self) -> Optional[Key]:
        """Deterministic list the op lives in as a real entry, if any."""
        ks = self.keys
        if isinstance(ks, Deterministic):
            return ks.key
        if isinstance(ks, MultiKey):
            return ks.target
        if isinstance(ks, WindowRange):
            return ks.target
        return None


def op_order(a: Operation, b: Operation) -> int:
    """-1, 0 or 1 by (txn_ts, stmt_idx)."""
    ka, kb = (a.txn_ts, a.stmt_idx), (b.txn_ts, b.stmt_idx)
    return (ka > kb) - (ka < kb)


@dataclass(frozen=True, slots=True)
class StateTransaction:
    txn_ts: Timestamp
    ops: tuple
    event_id: int = -1
    group: int = 0

    def __post_init__(self):
        ops = tuple(self.ops)
        object.__setattr__(self, "ops", ops)
        if not ops:
            raise CoreError("transaction has no operations")
        for i, op in enumerate(ops):
            if op.txn_ts != self.txn_ts:
                raise CoreError("op timestamp differs from transaction timestamp")
            if op.stmt_idx != i:
                raise CoreError("statement indices must be 0..n-1")
            if op.is_virtual:
                raise CoreError("virtual ops never appear in a transaction")


def read_keys_static(op: Operation) -> Sequence[Key]:
    """Keys an op reads when they are known before execution."""
    ks = op.keys
    if isinstance(ks, Deterministic):
        return (ks.key,)
    if isinstance(ks, MultiKey):
        return ks.reads
    if isinstance(ks, WindowRange) and ks.selector is None:
        return ks.reads
    return ()
