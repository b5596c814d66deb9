import threading

import pytest
from hypothesis import given, settings, strategies as st

from tpgstream.state_store import (DuplicateVersion, StoreError, UnknownKey,
                                   VersionedStateTable, init_table, parse_dump)


def test_reads_see_strictly_earlier_versions():
    t = init_table(2, 100)
    t.write_version(0, 3, 110, writer=7)
    t.write_version(0, 8, 90, writer=9)
    assert t.read_version(0, 3) == 100
    assert t.read_version(0, 4) == 110
    assert t.read_version(0, 100) == 90
    assert t.read_version(0, 0) == 100
    assert t.read_ref(0, 9).writer == 9


def test_duplicate_and_bad_writes():
    t = init_table(1)
    t.write_version(0, 2, 1, writer=0)
    with pytest.raises(DuplicateVersion):
        t.write_version(0, 2, 5, writer=1)
    with pytest.raises(StoreError):
        t.write_version(0, 0, 5, writer=1)
    with pytest.raises(UnknownKey):
        t.read_version(4, 1)


def test_truncate_and_window():
    t = init_table(2)
    for ts in (2, 5, 9):
        t.write_version(0, ts, ts * 10, writer=ts)
    got = t.window_read([0, 1], 9, 5)
    assert [v.ts for v in got[0]] == [5] and got[1] == []
    assert [v.ts for v in t.window_read([0], 6, 10)[0]] == [0, 2, 5]
    removed = t.truncate_after(0, 5)
    assert [v.ts for v in removed] == [5, 9]
    assert t.latest(0) == 20
    with pytest.raises(StoreError):
        t.truncate_after(0, 0)
    with pytest.raises(StoreError):
        t.window_read([0], 5, 0)


def test_gc_and_batch_guard():
    t = VersionedStateTable(2, [1, 2])
    t.write_version(1, 4, 7, writer=0)
    t.begin_batch()
    with pytest.raises(StoreError):
        t.gc_batch()
    t.end_batch()
    t.gc_batch()
    assert t.chain(1) == [(0, 7, -1)]
    assert t.snapshot() == [1, 7]
    t.check_invariants()


def test_dump_round_trip_and_growth():
    t = init_table(2, 5)
    t.write_version(1, 3, 6, writer=0)
    assert parse_dump(t.dump()) == {0: [(0, 5)], 1: [(0, 5), (3, 6)]}
    t.ensure_keys(4, 9)
    assert t.capacity == 4 and t.latest(3) == 9


def test_concurrent_writers_keep_order():
    t = init_table(1)

    def w(base):
        for i in range(200):
            t.write_version(0, base + 4 * i, i, writer=base)

    ths = [threading.Thread(target=w, args=(b,)) for b in (1, 2, 3, 4)]
    for th in ths:
        th.start()
    for th in ths:
        th.join()
    t.check_invariants()
    assert len(t.chain(0)) == 801


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 50), st.integers(-5, 5)), max_size=40, unique_by=lambda x: x[0]),
       st.integers(1, 60))
def test_chain_matches_model(writes, cut):
    """Chains stay sorted and a read returns the latest write below the reader."""
    t = init_table(1, 0)
    for ts, v in writes:
        t.write_version(0, ts, v, writer=ts)
    t.check_invariants()
    model = dict(writes)
    for reader in range(0, 52):
        below = [ts for ts in model if ts < reader]
        assert t.read_version(0, reader) == (model[max(below)] if below else 0)
    t.truncate_after(0, cut)
    assert [v.ts for v in t.chain(0)] == [0] + sorted(ts for ts in model if ts < cut)
