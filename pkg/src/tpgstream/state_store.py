"""Multi-versioned key/value table.

Each key holds a chain of ``Version(ts, value, writer)`` tuples sorted by
timestamp.  Timestamps are batch-local: ``gc_batch`` collapses every chain to
a single version at ts 0 once a batch has been decided.
"""

from __future__ import annotations

import threading
from bisect import bisect_left
from typing import Iterable, NamedTuple, Optional


class StoreError(Exception):
    pass


class UnknownKey(StoreError, KeyError):
    pass


class DuplicateVersion(StoreError):
    pass


class Version(NamedTuple):
    ts: int
    value: int
    writer: int


SNAPSHOT_WRITER = -1


class VersionedStateTable:
    def __init__(self, n_keys: int, initial=0):
        if n_keys <= 0:
            raise StoreError("table needs at least one key")
        self._chains: list[list[Version]] = []
        self._locks: list[threading.Lock] = []
        self._in_batch = False
        self._grow_lock = threading.Lock()
        self._append_keys(n_keys, initial)

    def _append_keys(self, n, initial):
        start = len(self._chains)
        if callable(initial):
            vals = [initial(k) for k in range(start, start + n)]
        elif isinstance(initial, (list, tuple)):
            if len(initial) != n:
                raise StoreError("initial value list has the wrong length")
            vals = list(initial)
        else:
            vals = [initial] * n
        self._chains.extend([Version(0, v, SNAPSHOT_WRITER)] for v in vals)
        self._locks.extend(threading.Lock() for _ in range(n))

    @property
    def capacity(self) -> int:
        return len(self._chains)

    def ensure_keys(self, n_keys: int, initial=0):
        """Grow the table so keys ``0..n_keys-1`` exist."""
        with self._grow_lock:
            if n_keys > len(self._chains):
                self._append_keys(n_keys - len(self._chains), initial)

    def _chain(self, key) -> list:
        if key < 0 or key >= len(self._chains):
            raise UnknownKey(key)
        return self._chains[key]

    # -- point access ---------------------------------------------------------

    def read_version(self, key: int, reader_ts: int) -> int:
        return self.read_ref(key, reader_ts).value

    def read_ref(self, key: int, reader_ts: int) -> Version:
        """The version with the largest ts strictly below ``reader_ts``."""
        chain = self._chain(key)
        with self._locks[key]:
            i = bisect_left(chain, (reader_ts,))
            # the snapshot sits at ts 0, so a reader at ts 0 still sees it
            return chain[i - 1] if i else chain[0]

    def write_version(self, key: int, ts: int, value, writer: int):
        if ts <= 0:
            raise StoreError("writes carry a positive batch timestamp")
        chain = self._chain(key)
        with self._locks[key]:
            i = bisect_left(chain, (ts,))
            if i < len(chain) and chain[i].ts == ts:
                raise DuplicateVersion(f"key {key} already has a version at ts {ts}")
            chain.insert(i, Version(ts, value, writer))

    def truncate_after(self, key: int, aborted_ts: int) -> list[Version]:
        """Drop every version with ts >= aborted_ts and return them."""
        if aborted_ts <= 0:
            raise StoreError("the ts 0 snapshot is never removable")
        chain = self._chain(key)
        with self._locks[key]:
            i = bisect_left(chain, (aborted_ts,))
            removed = chain[i:]
            del chain[i:]
        return removed

    def window_read(self, keys: Iterable[int], trigger_ts: int, range_: int) -> list[list[Version]]:
        """Versions with ``trigger_ts - range_ <= ts < trigger_ts`` per key."""
        if range_ <= 0:
            raise StoreError("window range must be > 0")
        lo_ts = trigger_ts - range_
        out = []
        for k in keys:
            chain = self._chain(k)
            with self._locks[k]:
                lo = bisect_left(chain, (lo_ts,)) if lo_ts > 0 else 0
                hi = bisect_left(chain, (trigger_ts,))
                out.append(chain[lo:hi])
        return out

    # -- whole-table helpers ----------------------------------------------------

    def chain(self, key: int) -> list[Version]:
        chain = self._chain(key)
        with self._locks[key]:
            return list(chain)

    def latest(self, key: int):
        return self._chain(key)[-1].value

    def snapshot(self) -> list:
        return [c[-1].value for c in self._chains]

    def begin_batch(self):
        self._in_batch = True

    def end_batch(self):
        self._in_batch = False

    def gc_batch(self):
        """Collapse each chain to its latest value, re-stamped at ts 0."""
        if self._in_batch:
            raise StoreError("gc_batch called while a batch is executing")
        chains = self._chains
        for i, c in enumerate(chains):
            if len(c) > 1 or c[0].writer != SNAPSHOT_WRITER:
                chains[i] = [Version(0, c[-1].value, SNAPSHOT_WRITER)]

    def check_invariants(self):
        for k, c in enumerate(self._chains):
            if not c or c[0].ts != 0:
                raise StoreError(f"chain {k} lost its snapshot")
            for a, b in zip(c, c[1:]):
                if not a.ts < b.ts:
                    raise StoreError(f"chain {k} not strictly ascending")

    def dump(self, keys: Optional[Iterable[int]] = None) -> str:
        """One line per key: ``key ts:value ts:value ...``."""
        ks = range(len(self._chains)) if keys is None else keys
        lines = []
        for k in ks:
            body = " ".join(f"{v.ts}:{v.value}" for v in self._chain(k))
            lines.append(f"{k} {body}")
        return "\n".join(lines)


def init_table(keys: int, initial=0) -> VersionedStateTable:
    return VersionedStateTable(keys, initial)


def parse_dump(text: str) -> dict[int, list[tuple[int, int]]]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        head, *rest = line.split()
        out[int(head)] = [tuple(int(x) for x in tok.split(":")) for tok in rest]
    return out
