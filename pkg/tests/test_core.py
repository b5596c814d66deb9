import pytest

from tpgstream.core import (CoreError, Deterministic, FnKind, MultiKey, NonDeterministic,
                            Operation, OpKind, StateTransaction, UdfRegistry, UnknownFunction,
                            WindowRange, op_order, read_keys_static, register_udf)


@pytest.fixture
def reg():
    r = UdfRegistry()
    r.register(FnKind.VALUE, lambda v, p: v[0] + 1, "inc")
    r.register(FnKind.CONDITION, lambda v, p: True, "yes")
    r.register(FnKind.WINDOW_AGG, lambda w, p: 0, "agg")
    r.register(FnKind.KEY_SELECTOR, lambda p, n: 0, "sel")
    return r


def test_registry_resolves_and_freezes(reg):
    inc = reg.by_name("inc")
    assert reg.resolve(inc)([4], ()) == 5
    assert inc in reg and len(reg) == 4
    reg.freeze()
    with pytest.raises(CoreError):
        reg.register(FnKind.VALUE, lambda v, p: 0)


def test_registry_rejects_bad_input(reg):
    with pytest.raises(CoreError):
        reg.register(FnKind.VALUE, lambda v, p: 0, "inc")
    with pytest.raises(CoreError):
        reg.register(FnKind.VALUE, 3)
    with pytest.raises(CoreError):
        reg.register(FnKind.VALUE, lambda v, p: 0, cost_us=-1)
    with pytest.raises(UnknownFunction):
        reg.resolve(99)
    with pytest.raises(UnknownFunction):
        reg.by_name("nope")


def test_stale_ref_from_other_registry(reg):
    other = UdfRegistry()
    ref = other.register(FnKind.CONDITION, lambda v, p: True)
    assert ref not in reg


def test_register_udf_default_registry():
    ref = register_udf(FnKind.VALUE, lambda v, p: 0)
    assert ref.kind == FnKind.VALUE


def test_key_specs_validate(reg):
    with pytest.raises(CoreError):
        Deterministic(-1)
    with pytest.raises(CoreError):
        MultiKey(0, ())
    with pytest.raises(CoreError):
        MultiKey(0, (1, 1))
    with pytest.raises(CoreError):
        NonDeterministic(reg.by_name("inc"))
    with pytest.raises(CoreError):
        WindowRange(0, 5, (1,))
    with pytest.raises(CoreError):
        WindowRange(3, 5)
    nd = NonDeterministic(reg.by_name("sel"), candidates=(3, 1, 2))
    assert nd.candidates == (1, 2, 3)


def test_operation_rules(reg):
    inc, yes, agg = reg.by_name("inc"), reg.by_name("yes"), reg.by_name("agg")
    with pytest.raises(CoreError):
        Operation(1, 1, 0, OpKind.WRITE, Deterministic(0))
    with pytest.raises(CoreError):
        Operation(1, 1, 0, OpKind.READ, MultiKey(0, (1,)), inc)
    with pytest.raises(CoreError):
        Operation(1, 1, 0, OpKind.WRITE, Deterministic(0), inc, cond_fn=inc)
    with pytest.raises(CoreError):
        Operation(1, 1, 0, OpKind.READ, WindowRange(2, 1, (0,)), inc)
    with pytest.raises(CoreError):
        Operation(1, 1, 0, OpKind.READ, Deterministic(0), is_virtual=True)
    w = Operation(1, 4, 0, OpKind.WRITE, WindowRange(2, 4, (0,), target=3), agg, yes)
    assert w.target_key() == 3


def test_ordering_and_static_reads(reg):
    inc = reg.by_name("inc")
    a = Operation(1, 1, 0, OpKind.WRITE, MultiKey(2, (2, 5)), inc)
    b = Operation(2, 1, 1, OpKind.READ, Deterministic(5))
    assert op_order(a, b) == -1 and op_order(b, a) == 1 and op_order(a, a) == 0
    assert read_keys_static(a) == (2, 5)
    assert a.target_key() == 2 and b.target_key() == 5


def test_transaction_checks(reg):
    inc = reg.by_name("inc")
    o0 = Operation(1, 3, 0, OpKind.WRITE, Deterministic(0), inc)
    o1 = Operation(2, 3, 1, OpKind.WRITE, Deterministic(1), inc)
    assert len(StateTransaction(3, [o0, o1]).ops) == 2
    with pytest.raises(CoreError):
        StateTransaction(3, ())
    with pytest.raises(CoreError):
        StateTransaction(4, (o0,))
    with pytest.raises(CoreError):
        StateTransaction(3, (o1,))
