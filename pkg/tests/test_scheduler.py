import pytest
from hypothesis import given, settings, strategies as st

from tpgstream import planner
from tpgstream.core import Deterministic, MultiKey, StateTransaction
from tpgstream.scheduler import (ALL_DECISIONS, BFS, COARSE, DFS, EAGER, FINE, LAZY, NS, S,
                                 DecisionThresholds, SchedulerError, SchedulingDecision,
                                 SchedulingUnit, TPGProperties, assign, chain_units, decide,
                                 detect_cycles, form_units, has_unit_cycles, inter_unit_edges,
                                 measure_properties, trace_line, unit_ranks)

from _support import deposit_transfer_txns, op, tiny_registry


@pytest.fixture(scope="module")
def reg():
    return tiny_registry()


def test_decision_parse_and_short():
    d = SchedulingDecision.parse("s/c/l")
    assert (d.explore, d.granularity, d.abort, d.explore_variant) == (S, COARSE, LAZY, DFS)
    assert SchedulingDecision.parse("BFS/F/E").explore_variant == BFS
    assert SchedulingDecision.parse("NS/FINE/EAGER").short() == "NS/F/E"
    for bad in ("S/F", "X/F/E", "S/Q/E", "S/F/Z"):
        with pytest.raises(SchedulerError):
            SchedulingDecision.parse(bad)
    assert len(set(ALL_DECISIONS)) == 8


def test_thresholds_text_round_trip():
    th = DecisionThresholds.default()
    assert DecisionThresholds.from_text(th.to_text()) == th
    with pytest.raises(SchedulerError):
        DecisionThresholds.from_text("nonsense")
    with pytest.raises(SchedulerError):
        DecisionThresholds.from_text("mystery = 3")
    with pytest.raises(SchedulerError):
        DecisionThresholds.from_text("dep_count_high = 1")


def test_property_validation():
    with pytest.raises(SchedulerError):
        TPGProperties(n_td=-1)
    with pytest.raises(SchedulerError):
        TPGProperties(abort_ratio=1.5)


def test_trace_line_shape():
    d = SchedulingDecision(NS, FINE, EAGER)
    line = trace_line(3, 1, d, TPGProperties(n_td=4))
    assert line.startswith("batch=3 group=1 explore=NS/- gran=F abort=E props=(")
    assert "td=4" in line


def test_chain_units_follow_keys(reg):
    tpg = planner.build(deposit_transfer_txns(reg), 2)
    units = chain_units(tpg)
    keys = [{tpg.vertices[v].op.target_key() for v in u.members} for u in units]
    assert keys == [{0}, {1}]
    assert [len(u) for u in units] == [3, 2]


def test_coarse_units_merge_cycles(reg):
    # the transfer batch links the A and B chains both ways
    tpg = planner.build(deposit_transfer_txns(reg), 2)
    units = chain_units(tpg)
    edges = inter_unit_edges(tpg, units)
    assert edges == {(0, 1), (1, 0)}
    assert has_unit_cycles(units, edges)
    merged = form_units(tpg, COARSE)
    assert len(merged) == 1
    orders = [tpg.vertices[v].order for v in merged[0].members]
    assert orders == sorted(orders)


def test_acyclic_chains_stay_apart(reg):
    f = reg.by_name
    txns = [StateTransaction(1, (op(1, 0, Deterministic(0), f("add"), params=(1,)),)),
            StateTransaction(2, (op(2, 0, MultiKey(1, (1, 0)), f("sum"), params=(0,)),)),
            StateTransaction(3, (op(3, 0, Deterministic(1), f("add"), params=(1,)),))]
    tpg = planner.build(txns, 2)
    units = form_units(tpg, COARSE)
    assert len(units) == 2
    assert unit_ranks(tpg, units) == [0, 1]
    with pytest.raises(SchedulerError):
        form_units(tpg, "MEDIUM")


def test_detect_cycles_by_hand():
    units = [SchedulingUnit(i, [i]) for i in range(4)]
    out = detect_cycles(units, {(0, 1), (1, 2), (2, 0), (2, 3)})
    assert sorted(len(u) for u in out) == [1, 3]
    assert not has_unit_cycles(units, {(0, 1), (1, 2)})


def test_measure_properties(reg):
    tpg = planner.build(deposit_transfer_txns(reg), 2)
    p = measure_properties(tpg, 0.25, reg)
    assert (p.n_td, p.n_pd, p.n_ld, p.n_vertices) == (3, 2, 2, 5)
    assert p.has_cycles_coarse and p.abort_ratio == 0.25
    assert p.avg_complexity == 0.0
    assert p.degree_skew >= 1.0


def test_assign_modes():
    units = [SchedulingUnit(i, list(range(n)), rank=i % 2) for i, n in enumerate([5, 1, 4, 2, 3])]
    ns = assign(units, 2, NS)
    assert sorted(ns.thread_load()) == [7, 8]
    dfs = assign(units, 2, DFS)
    assert len(dfs.strata) == 2 and sum(dfs.thread_load()) == 15
    assert [len(s) for s in assign(units, 3, BFS).strata] == [3, 2]
    with pytest.raises(SchedulerError):
        assign(units, 0, NS)
    with pytest.raises(SchedulerError):
        assign(units, 2, "RANDOM")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=1, max_size=40), st.integers(1, 8))
def test_lpt_balance_bound(sizes, n):
    """Largest-first assignment keeps the worst thread within one unit of the mean."""
    units = [SchedulingUnit(i, list(range(s))) for i, s in enumerate(sizes)]
    load = assign(units, n, NS).thread_load()
    assert sum(load) == sum(sizes)
    assert max(load) <= sum(sizes) / n + max(sizes)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.floats(1, 50), st.floats(0, 1), st.integers(0, 5000),
       st.integers(0, 5000), st.integers(0, 5000), st.booleans())
def test_decide_is_total_and_monotone_in_abort(cx, skew, ab, ld, td, pd, cyc):
    th = DecisionThresholds.default()
    p = TPGProperties(cx, skew, ab, ld, td, pd, cyc)
    d = decide(p, th)
    assert d in {SchedulingDecision(e, g, a, th.explore_variant)
                 for e in (S, NS) for g in (FINE, COARSE) for a in (EAGER, LAZY)}
    if d.abort == LAZY:
        higher = TPGProperties(cx, skew, min(1.0, ab + 0.1), ld, td, pd, cyc)
        assert decide(higher, th).abort == LAZY
    if cyc:
        assert d.granularity == FINE
