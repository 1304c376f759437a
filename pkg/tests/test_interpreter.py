"""Virtual machine invariants: scoping, records, taint, trace text."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vexec import autodiff as ad
from vexec.config import Config
from vexec.executor import ExecutorOutput
from vexec.interpreter import (BUILTIN_NAMES, RETURN_SLOT, BuiltinTable,
                               FunctionValue, Interpreter, InterpreterFault,
                               LambdaBudget, ScriptTruncated, format_trace)


class StubSemantics:
    """Deterministic fake executor: call k returns a row filled with k."""

    def __init__(self, h: int):
        self.h = h
        self.calls = []

    def execute(self, theta, contexts, arg_pairs):
        self.calls.append((theta, list(contexts), list(arg_pairs)))
        k = float(len(self.calls))
        return ExecutorOutput(ret=ad.Tensor(np.full((1, self.h), k)),
                              arg_outputs=[ad.Tensor(np.full((1, self.h), k))
                                           for _ in arg_pairs])


class FakeNode:
    def __init__(self, node_id: int):
        self.node_id = node_id


@pytest.fixture
def config():
    return Config(h=8)


@pytest.fixture
def machine(config):
    store = ad.ParameterStore()
    BuiltinTable.init_params(store, np.random.default_rng(0), config)
    table = BuiltinTable(store, config)
    return Interpreter(StubSemantics(config.h), table, config)


def vec(h, fill=0.0):
    return ad.Tensor(np.full((1, h), fill))


# -- scopes and memory -------------------------------------------------------


def test_scope_shadowing(machine, config):
    outer = machine.guess(vec(config.h, 1.0), 1, "x")
    machine.store("x", outer)
    machine.push_scope("f")
    inner = machine.guess(vec(config.h, 2.0), 2, "x")
    machine.store("x", inner)
    assert machine.lookup("x").object_id == inner.object_id
    machine.pop_scope()
    assert machine.lookup("x").object_id == outer.object_id


def test_inner_scope_reads_outer(machine, config):
    outer = machine.guess(vec(config.h), 1, "g")
    machine.store("g", outer)
    machine.push_scope("f")
    assert machine.lookup("g").object_id == outer.object_id


def test_history_preserved(machine, config):
    first = machine.guess(vec(config.h), 1, "x")
    second = machine.guess(vec(config.h), 2, "x")
    machine.store("x", first)
    machine.store("x", second)
    var = machine.scopes[-1].table["x"]
    assert [o.object_id for o in var.history] == [first.object_id, second.object_id]
    assert var.current.object_id == second.object_id


def test_object_ids_start_at_one_and_are_dense(machine, config):
    ids = [machine.guess(vec(config.h), i, "x").object_id for i in range(5)]
    assert ids == [1, 2, 3, 4, 5]


def test_memory_snapshot_shadowing_exclusion_order(machine, config):
    a = machine.guess(vec(config.h), 1, "a")
    machine.store("a", a)
    ret = machine.guess(vec(config.h), 2, "r")
    machine.store_silent(RETURN_SLOT, ret)
    machine.push_scope("f")
    a2 = machine.guess(vec(config.h), 3, "a")
    machine.store("a", a2)
    b = machine.guess(vec(config.h), 4, "b")
    machine.store("b", b)
    snap = machine.memory_snapshot()
    ids = [o.object_id for o in snap]
    assert ids == sorted(ids)
    assert a.object_id not in ids          # shadowed by a2
    assert ret.object_id not in ids        # reserved slot excluded
    assert {a2.object_id, b.object_id} <= set(ids)


def test_memory_snapshot_dedups_aliases(machine, config):
    obj = machine.guess(vec(config.h), 1, "x")
    machine.store("x", obj)
    machine.store("y", obj)
    snap = machine.memory_snapshot()
    assert [o.object_id for o in snap] == [obj.object_id]


def test_memory_entry_count_spans_popped_scopes(machine, config):
    machine.store("a", machine.guess(vec(config.h), 1, "a"))
    machine.push_scope("f")
    machine.store("b", machine.guess(vec(config.h), 2, "b"))
    machine.pop_scope()
    assert machine.memory_entry_count() == 2


def test_dump_memory_lists_history(machine, config):
    first = machine.guess(vec(config.h), 1, "x")
    second = machine.guess(vec(config.h), 2, "x")
    machine.store("x", first)
    machine.store("x", second)
    dump = machine.dump_memory()
    assert f"x -> o{first.object_id},o{second.object_id}" in dump


# -- lookup -------------------------------------------------------------------


def test_lookup_miss_self_heals(machine, config):
    node = FakeNode(7)
    obj = machine.lookup("ghost", node, guess_vector=vec(config.h, 3.0))
    ops = [e.op for e in machine.trace]
    assert ops == ["GUESS", "STORE", "LOOKUP"]
    assert machine.lookup("ghost").object_id == obj.object_id
    assert obj.origin_node == 7


def test_lookup_miss_without_guess_faults(machine):
    with pytest.raises(InterpreterFault):
        machine.lookup("ghost")


def test_lookup_returns_latest_binding(machine, config):
    first = machine.guess(vec(config.h), 1, "x")
    machine.store("x", first)
    second = machine.guess(vec(config.h), 2, "x")
    machine.store("x", second)
    assert machine.lookup("x").object_id == second.object_id


# -- builtins ------------------------------------------------------------------


def test_all_builtins_resolve(machine):
    slots = [machine.builtins.resolve(name) for name in BUILTIN_NAMES]
    assert sorted(slots) == list(range(len(BUILTIN_NAMES)))
    assert len(BUILTIN_NAMES) == 69


def test_builtin_index_follows_first_use(machine):
    assert machine.builtins.resolve("__while__") == 0
    assert machine.builtins.resolve("+") == 1
    assert machine.builtins.resolve("__while__") == 0


def test_unknown_builtin_faults(machine):
    with pytest.raises(InterpreterFault):
        machine.builtins.resolve("__bogus__")


def test_builtin_index_round_trip(machine, config):
    machine.builtins.resolve("*")
    machine.builtins.resolve("__if__")
    saved = machine.builtins.index_map()
    other = BuiltinTable(machine.builtins.store, config)
    other.load_index_map(saved)
    assert other.resolve("*") == saved["*"]
    assert other.resolve("__if__") == saved["__if__"]


def test_load_index_map_rejects_unknown(machine):
    with pytest.raises(InterpreterFault):
        machine.builtins.load_index_map({"__bogus__": 0})


def test_builtin_rows_differ_by_slot(machine):
    a = machine.builtins.row("+").data
    b = machine.builtins.row("*").data
    assert not np.array_equal(a, b)


# -- lambda calls ---------------------------------------------------------------


def test_lambda_records_args_contexts_pairs(machine, config):
    ctx_obj = machine.guess(vec(config.h, 5.0), 1, "c")
    machine.push_context(1, "__if__", ctx_obj)
    a = machine.guess(vec(config.h, 1.0), 2, "a")
    fv = machine.builtins.function_value("+")
    result = machine.lambda_call(fv, [a], vec(config.h), 3)
    record = machine.records[0]
    assert record.callee.name == "+"
    assert [c.object_id for c in record.contexts] == [ctx_obj.object_id]
    assert [x.object_id for x in record.args] == [a.object_id]
    assert record.pairs[0][0] is a.guessed
    assert record.result.object_id == result.object_id
    assert result.executed is not None


def test_pair_overrides_replace_argument_pair(machine, config):
    a = machine.guess(vec(config.h, 1.0), 1, "a")
    b = machine.guess(vec(config.h, 2.0), 2, "b")
    fv = machine.builtins.function_value("+")
    override = (b.vector, b.vector)
    machine.lambda_call(fv, [a, b], vec(config.h), 3,
                        pair_overrides={0: override})
    record = machine.records[0]
    assert record.pairs[0] == override
    assert record.pairs[1][0] is b.guessed


def test_max_args_fault(machine, config):
    args = [machine.guess(vec(config.h), i, "a") for i in range(config.max_args + 1)]
    fv = machine.builtins.function_value("+")
    with pytest.raises(InterpreterFault):
        machine.lambda_call(fv, args, vec(config.h), 1)


def test_budget_truncates_third_call(machine, config):
    machine.lambda_budget = LambdaBudget(2)
    fv = machine.builtins.function_value("+")
    machine.lambda_call(fv, [], vec(config.h), 1)
    machine.lambda_call(fv, [], vec(config.h), 2)
    with pytest.raises(ScriptTruncated):
        machine.lambda_call(fv, [], vec(config.h), 3)


def test_on_lambda_hook_sees_call_before_execution(machine, config):
    seen = []
    machine.on_lambda = lambda rid, callee, ctxs, args: seen.append(
        (rid, callee.name, len(ctxs), len(args)))
    fv = machine.builtins.function_value("*")
    a = machine.guess(vec(config.h), 1, "a")
    machine.lambda_call(fv, [a], vec(config.h), 2)
    assert seen == [(0, "*", 0, 1)]


# -- taint tracking --------------------------------------------------------------


def test_taint_propagates_through_results(machine, config):
    dirty = machine.guess(vec(config.h), 1, "d")
    dirty.contaminated = True
    clean = machine.guess(vec(config.h), 2, "c")
    fv = machine.builtins.function_value("+")
    r1 = machine.lambda_call(fv, [clean], vec(config.h), 3)
    r2 = machine.lambda_call(fv, [dirty, clean], vec(config.h), 4)
    r3 = machine.lambda_call(fv, [r2], vec(config.h), 5)
    assert not r1.contaminated
    assert r2.contaminated and r3.contaminated
    assert machine.first_contaminated_record == 1


def test_taint_set_at_matching_lookup_node(machine, config):
    obj = machine.guess(vec(config.h), 1, "x")
    machine.store("x", obj)
    machine.contaminate_node = 42
    machine.lookup("x", FakeNode(41))
    assert not obj.contaminated
    machine.lookup("x", FakeNode(42))
    assert obj.contaminated


def test_taint_is_temporal(machine, config):
    """Uses before the tainted occurrence stay clean; later uses are dirty."""
    obj = machine.guess(vec(config.h), 1, "x")
    machine.store("x", obj)
    machine.contaminate_node = 9
    fv = machine.builtins.function_value("+")
    early = machine.lambda_call(fv, [machine.lookup("x", FakeNode(8))], vec(config.h), 8)
    late = machine.lambda_call(fv, [machine.lookup("x", FakeNode(9))], vec(config.h), 9)
    assert not early.contaminated
    assert late.contaminated
    assert machine.first_contaminated_record == 1


# -- structure and trace -----------------------------------------------------------


def test_pop_scope_underflow_faults(machine):
    with pytest.raises(InterpreterFault):
        machine.pop_scope()


def test_pop_context_underflow_faults(machine):
    with pytest.raises(InterpreterFault):
        machine.pop_context()


def test_trace_line_formats(machine, config):
    obj = machine.guess(vec(config.h), 1, "x")
    machine.store("x", obj)
    machine.lookup("x")
    ctx = machine.guess(vec(config.h), 2, "cond")
    machine.push_context(2, "__if__", ctx)
    fv = machine.builtins.function_value("+")
    result = machine.lambda_call(fv, [obj, ctx], vec(config.h), 3)
    zero = machine.lambda_call(fv, [], vec(config.h), 3)
    machine.pop_context()
    machine.push_scope("f")
    machine.emit_return(result)
    machine.pop_scope()
    lines = format_trace(machine.trace).splitlines()
    assert lines[0] == "1\tGUESS\tx\to1"
    assert lines[1] == "2\tSTORE\tx\to1"
    assert lines[2] == "3\tLOOKUP\tx\to1"
    assert lines[3] == "4\tGUESS\tcond\to2"
    assert lines[4] == "5\tPUSH_CTX\t__if__\to2"
    assert lines[5] == "6\tLAMBDA\t+\t1\to1,o2\to3"
    assert lines[6] == "7\tLAMBDA\t+\t1\t-\to4"
    assert lines[7] == "8\tPOP_CTX\t__if__"
    assert lines[8] == "9\tPUSH_SCOPE\tfunc:f"
    assert lines[9] == "10\tRETURN\to3"
    assert lines[10] == "11\tPOP_SCOPE\tfunc:f"


def test_store_silent_emits_nothing(machine, config):
    machine.store_silent(RETURN_SLOT, machine.guess(vec(config.h), 1, "r"))
    assert [e.op for e in machine.trace] == ["GUESS"]


def test_function_value_kinds(machine, config):
    builtin = machine.builtins.function_value("+")
    assert builtin.kind == "builtin"
    guessed = FunctionValue(kind="guessed", theta=vec(config.h), name="f")
    assert guessed.kind == "guessed"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcd"), st.booleans()),
                min_size=1, max_size=30))
def test_store_lookup_roundtrip_property(ops):
    config = Config(h=4)
    store = ad.ParameterStore()
    BuiltinTable.init_params(store, np.random.default_rng(0), config)
    machine = Interpreter(StubSemantics(config.h), BuiltinTable(store, config), config)
    last = {}
    for i, (name, fresh_scope) in enumerate(ops):
        if fresh_scope and len(machine.scopes) < 4:
            machine.push_scope(f"s{i}")
            last = dict(last)
        obj = machine.guess(vec(config.h, float(i)), i, name)
        machine.store(name, obj)
        last[name] = obj.object_id
        assert machine.lookup(name).object_id == last[name]
