"""Lowering: golden trace, per-construct shapes, linearity, compilation."""

import ast as python_ast
from pathlib import Path

import numpy as np
import pytest

from vexec.codegen import CodegenError
from vexec.config import Config
from vexec.guesser import Vocabulary
from vexec.interpreter import format_trace
from vexec.model import Model

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"


def build_model(code: str, h: int = 16) -> Model:
    config = Config(h=h, encoder_layers=1, executor_layers=1)
    vocab = Vocabulary.build([code], config.vocab_size, config.oov_buckets)
    return Model.fresh(config, vocab)


def run(code: str):
    return build_model(code).run(code)


def trace_of(code: str) -> list[str]:
    return format_trace(run(code).trace).splitlines()


def ops_of(lines: list[str]) -> list[str]:
    return [line.split("\t")[1] for line in lines]


def lambda_lines(lines: list[str]) -> list[list[str]]:
    return [line.split("\t") for line in lines if line.split("\t")[1] == "LAMBDA"]


# -- golden trace ---------------------------------------------------------------


def test_golden_celsius_trace():
    code = (DATA / "celsius.py").read_text()
    expected = (GOLDEN / "celsius_trace.txt").read_text()
    assert format_trace(run(code).trace) == expected


def test_golden_trace_stable_across_seeds():
    """Object ids and labels never depend on parameter values."""
    code = (DATA / "celsius.py").read_text()
    config = Config(h=16, encoder_layers=1, executor_layers=1)
    vocab = Vocabulary.build([code], config.vocab_size, config.oov_buckets)
    first = format_trace(Model.fresh(config, vocab, seed=1).run(code).trace)
    second = format_trace(Model.fresh(config, vocab, seed=2).run(code).trace)
    assert first == second == (GOLDEN / "celsius_trace.txt").read_text()


def test_dry_run_trace_matches_real_run():
    code = ("def f(a, b=2):\n"
            "    if a > b:\n"
            "        c = [x for x in a if x]\n"
            "    else:\n"
            "        c = f(b - 1, a)\n"
            "    return c\n"
            "out = f(1)\n")
    model = build_model(code)
    assert format_trace(model.run(code).trace) == \
        format_trace(model.dry_run(code).trace)


# -- linearity -------------------------------------------------------------------


STATEMENT_CLASSES = (python_ast.FunctionDef, python_ast.Assign,
                     python_ast.AugAssign, python_ast.Return, python_ast.If,
                     python_ast.While, python_ast.For, python_ast.Try,
                     python_ast.Expr, python_ast.Import, python_ast.ImportFrom)


def _is_textual_elif(code: str, node) -> bool:
    segment = python_ast.get_source_segment(code, node)
    return segment is not None and segment.startswith("elif")


def count_statements(code: str) -> int:
    """Independent statement count straight from the stdlib syntax tree.

    A textual ``elif`` is a continuation of its parent ``if``, not a second
    dispatch, so the nested If node the stdlib synthesizes is excluded.
    """
    n = 0
    for node in python_ast.walk(python_ast.parse(code)):
        if isinstance(node, STATEMENT_CLASSES) \
                and not (isinstance(node, python_ast.If)
                         and _is_textual_elif(code, node)):
            n += 1
    return n


def count_blocks(code: str) -> int:
    """Branch bodies the lowering must run exactly once, counted from the
    stdlib tree: function bodies, then/else bodies, loop bodies and their
    else clauses, try/else/finally bodies, and handler bodies."""
    blocks = 0
    for node in python_ast.walk(python_ast.parse(code)):
        if isinstance(node, python_ast.FunctionDef):
            blocks += 1
        elif isinstance(node, python_ast.If):
            blocks += 1
            chains = len(node.orelse) == 1 \
                and isinstance(node.orelse[0], python_ast.If) \
                and _is_textual_elif(code, node.orelse[0])
            if node.orelse and not chains:
                blocks += 1
        elif isinstance(node, (python_ast.While, python_ast.For)):
            blocks += 1 + (1 if node.orelse else 0)
        elif isinstance(node, python_ast.Try):
            blocks += 1 + (1 if node.orelse else 0) + (1 if node.finalbody else 0)
        elif isinstance(node, python_ast.ExceptHandler):
            blocks += 1
    return blocks


BRANCHY = ("def f(a):\n"
           "    if a > 0:\n"
           "        b = 1\n"
           "    elif a < 0:\n"
           "        b = 2\n"
           "    else:\n"
           "        b = 3\n"
           "    while b:\n"
           "        b -= 1\n"
           "    else:\n"
           "        b = 4\n"
           "    for i in a:\n"
           "        b += i\n"
           "    try:\n"
           "        b = g(b)\n"
           "    except ValueError:\n"
           "        b = 0\n"
           "    finally:\n"
           "        b = b\n"
           "    return b\n"
           "r = f(3)\n")


def test_every_statement_dispatched_exactly_once():
    result = run(BRANCHY)
    assert all(v == 1 for v in result.statement_counts.values())
    assert result.statement_dispatches == len(result.statement_counts)
    assert result.statement_dispatches == count_statements(BRANCHY)


def test_every_branch_body_runs_exactly_once():
    result = run(BRANCHY)
    assert all(v == 1 for v in result.branch_counts.values())
    # module block is not counted; every nested block is
    assert len(result.branch_counts) == count_blocks(BRANCHY)


def test_context_stack_balanced_and_nested():
    lines = trace_of(BRANCHY)
    depth = 0
    for line in lines:
        op = line.split("\t")[1]
        if op == "PUSH_CTX":
            depth += 1
        elif op == "POP_CTX":
            depth -= 1
        assert depth >= 0
    assert depth == 0


def test_object_ids_dense_from_one():
    result = run(BRANCHY)
    ids = set()
    for event in result.trace:
        for field in event.fields:
            for part in field.split(","):
                if part.startswith("o") and part[1:].isdigit():
                    ids.add(int(part[1:]))
    assert ids == set(range(1, max(ids) + 1))


# -- control flow shapes ------------------------------------------------------------


def test_if_else_contexts_derive_from_condition():
    lines = trace_of("if a > 1:\n    b = 2\nelse:\n    b = 3\n")
    calls = lambda_lines(lines)
    cond_result = calls[0][5]                  # o-id of the comparison
    if_call = next(c for c in calls if c[2] == "__if__")
    else_call = next(c for c in calls if c[2] == "__else__")
    assert if_call[4] == cond_result
    assert else_call[4] == cond_result


def test_elif_nests_inside_else_context():
    lines = trace_of("if a:\n    b = 1\nelif c:\n    b = 2\n")
    inner_if_calls = [c for c in lambda_lines(lines) if c[2] == "__if__"]
    assert inner_if_calls[0][3] == "0"         # outer if at depth 0
    assert inner_if_calls[1][3] == "1"         # elif evaluated inside __else__


def test_while_body_inside_context():
    lines = trace_of("while n:\n    n = step(n)\n")
    step_call = next(c for c in lambda_lines(lines) if c[2] == "step")
    assert step_call[3] == "1"


def test_for_end_iterator_inside_context():
    lines = trace_of("for i in xs:\n    y = i\n")
    ops = [line.split("\t") for line in lines]
    end = next(o for o in ops if o[1] == "LAMBDA" and o[2] == "__end_for_iterator__")
    pop = next(o for o in ops if o[1] == "POP_CTX")
    assert int(end[0]) < int(pop[0])
    assert end[3] == "1"


def test_for_tuple_target_unpacks():
    lines = trace_of("for k, v in items:\n    y = k\n")
    unpacks = [c for c in lambda_lines(lines) if c[2] == "__unpack_k__"]
    assert len(unpacks) == 2
    guesses = [line for line in lines if "__unpack_index_" in line]
    assert any("__unpack_index_0__" in g for g in guesses)
    assert any("__unpack_index_1__" in g for g in guesses)


def test_except_handler_binds_context_object():
    lines = trace_of("try:\n    x = 1\nexcept ValueError as err:\n    y = err\n")
    except_call = next(c for c in lambda_lines(lines) if c[2] == "__except__")
    ctx_id = except_call[5]
    assert f"STORE\terr\t{ctx_id}" in "\n".join(lines)


def test_try_clauses_emit_their_builtins():
    lines = trace_of("try:\n    a = 1\nexcept E:\n    b = 2\nelse:\n    c = 3\n"
                     "finally:\n    d = 4\n")
    names = [c[2] for c in lambda_lines(lines)]
    assert names == ["__try__", "__except__", "__else__", "__finally__"]


def test_conditional_expression_combines_in_context():
    lines = trace_of("y = a if t else b\n")
    calls = [c for c in lambda_lines(lines) if c[2] == "__conditional_expression__"]
    assert len(calls) == 2
    assert calls[0][3] == "0" and calls[1][3] == "1"
    assert len(calls[1][4].split(",")) == 2    # (then, else) operands


# -- expressions ----------------------------------------------------------------


def test_comprehension_scope_and_closers():
    code = ("ys = [f(x) for x in xs]\n"
            "s = {x for x in xs}\n"
            "g = (x for x in xs)\n"
            "d = {k: k for k in xs}\n")
    lines = trace_of(code)
    names = [c[2] for c in lambda_lines(lines)]
    assert names.count("__list_comprehension__") == 2   # list and set share it
    assert names.count("__generator__") == 1
    assert names.count("__dictionary_comprehension__") == 1
    assert names.count("__set_of__") == 1
    assert names.count("__list_of__") == 2              # list closer + generator closer
    assert names.count("__dictionary_of__") == 1
    scopes = [line for line in lines if "PUSH_SCOPE" in line]
    assert len(scopes) == 4


def test_comprehension_if_clause_context():
    lines = trace_of("ys = [x for x in xs if x > 0]\n")
    closer = next(c for c in lambda_lines(lines) if c[2] == "__list_of__")
    assert closer[3] == "2"                    # comp ctx + if clause ctx


def test_chained_comparison_pairwise_then_and():
    lines = trace_of("ok = 1 <= x < 10\n")
    names = [c[2] for c in lambda_lines(lines)]
    assert names == ["<=", "<", "and"]


def test_negated_membership_and_identity():
    lines = trace_of("a = x not in ys\nb = x is not y\n")
    names = [c[2] for c in lambda_lines(lines)]
    assert names == ["in", "not", "is", "not"]


def test_power_augmented_assignment_reuses_power():
    lines = trace_of("x **= 2\n")
    assert [c[2] for c in lambda_lines(lines)] == ["**"]


def test_unary_operators_reuse_binary_rows():
    lines = trace_of("a = -x\nb = +x\nc = ~x\nd = not x\n")
    names = [c[2] for c in lambda_lines(lines)]
    assert names == ["-", "+", "~", "not"]
    for call in lambda_lines(lines):
        assert len(call[4].split(",")) == 1


def test_call_argument_wrappers():
    lines = trace_of("r = g(1, *rest, key=2, **extra)\n")
    names = [c[2] for c in lambda_lines(lines)]
    assert names == ["__list_splat__", "__keyword_argument__",
                     "__dictionary_splat__", "g"]
    g_call = lambda_lines(lines)[-1]
    assert len(g_call[4].split(",")) == 4


def test_call_args_truncated_at_cap():
    args = ", ".join(str(i) for i in range(20))
    result = run(f"r = g({args})\n")
    assert len(result.records[-1].args) == 16


def test_subscript_augmented_assignment_reads_then_writes():
    lines = trace_of("d[k] += 1\n")
    names = [c[2] for c in lambda_lines(lines)]
    assert names == ["__subscript__", "+=", "__subscript_assign__"]


def test_attribute_assignment_updates_base_binding():
    lines = trace_of("obj.attr = 5\n")
    names = [c[2] for c in lambda_lines(lines)]
    assert names == ["__subscript_assign__"]
    assign = lambda_lines(lines)[-1]
    assert f"STORE\tobj\t{assign[5]}" in "\n".join(lines)


def test_multi_target_assignment_single_evaluation():
    lines = trace_of("a = b = make()\n")
    calls = lambda_lines(lines)
    assert len(calls) == 1
    result_id = calls[0][5]
    stores = [line for line in lines if "\tSTORE\t" in line]
    assert [s.split("\t")[2] for s in stores[-2:]] == ["a", "b"]
    assert all(s.endswith(result_id) for s in stores[-2:])


def test_unbound_name_self_heals():
    lines = trace_of("y = missing + 1\n")
    assert lines[0].endswith("GUESS\tmissing\to1")
    assert lines[1].endswith("STORE\tmissing\to1")
    assert lines[2].endswith("LOOKUP\tmissing\to1")


def test_imports_are_inert():
    lines = trace_of("import os\nfrom sys import path as p\nx = 1\n")
    assert ops_of(lines) == ["GUESS", "STORE"]


def test_string_literal_label_is_source_text():
    lines = trace_of("m = 'hi there'\n")
    assert lines[0].endswith("GUESS\t'hi there'\to1")


def test_long_literal_label_capped():
    text = "x" * 100
    lines = trace_of(f"m = '{text}'\n")
    label = lines[0].split("\t")[2]
    assert len(label) == 32


def test_newlines_escaped_in_labels():
    lines = trace_of('m = """a\nb"""\n')
    label = lines[0].split("\t")[2]
    assert "\n" not in label and "\\n" in label


def test_tuple_vs_expression_list():
    lines = trace_of("a = (1, 2)\nb = 3, 4\n")
    names = [c[2] for c in lambda_lines(lines)]
    assert names == ["__tuple_of__", "__expression_list_of__"]


# -- functions -------------------------------------------------------------------


def test_function_body_executes_once_total():
    code = ("def f(n):\n"
            "    y = n * 2\n"
            "    return y\n"
            "a = f(1)\nb = f(2)\nc = f(3)\n")
    lines = trace_of(code)
    assert sum(1 for line in lines if "PUSH_SCOPE" in line) == 1
    names = [c[2] for c in lambda_lines(lines)]
    assert names.count("__compile_function__") == 1
    assert names.count("f") == 3
    assert names.count("*") == 1               # body arithmetic ran once


def test_calls_use_compiled_function_value():
    code = "def f(n):\n    return n\nr = f(1)\n"
    result = run(code)
    call = result.records[-1]
    assert call.callee.kind == "compiled"
    assert call.callee.name == "f"


def test_recursive_call_uses_guessed_value():
    code = "def f(n):\n    return f(n - 1)\nf(3)\n"
    result = run(code)
    kinds = [r.callee.kind for r in result.records if r.callee.name == "f"]
    assert kinds == ["guessed", "compiled"]


def test_compile_argument_layout():
    code = "def f(a, b=1):\n    return a + b\n"
    result = run(code)
    compile_record = next(r for r in result.records
                          if r.callee.name == "__compile_function__")
    assert len(compile_record.args) == 6       # guess, a, b, ret, a, b
    a_obj = compile_record.args[1]
    assert compile_record.args[4] is a_obj
    ret_pair = compile_record.pairs[3]
    assert ret_pair[0] is ret_pair[1]          # resolved return in both halves


def test_functions_without_return_compile_none():
    lines = trace_of("def f():\n    x = 1\n")
    none_guess = [line for line in lines if "GUESS\tNone" in line]
    assert len(none_guess) == 1


def test_rebound_function_name_is_guessed_again():
    code = "def f(n):\n    return n\nf = 5\nr = f(1)\n"
    result = run(code)
    assert result.records[-1].callee.kind == "guessed"


def test_shadowed_function_object_still_compiled():
    code = ("def f(n):\n    return n\n"
            "g = f\n"
            "r = g(1)\n")
    result = run(code)
    assert result.records[-1].callee.kind == "compiled"


# -- samples, errors -----------------------------------------------------------------


def test_l1_samples_capture_executed_assignments():
    code = "a = f(1)\nb = 2\nc = d = f(3)\n"
    result = run(code)
    assert [s.name for s in result.l1_samples] == ["a"]
    sample = result.l1_samples[0]
    assert sample.value.executed is not None
    assert sample.lhs_guess.shape == (1, 16)


def test_unsupported_constructs_raise():
    for code in ("f = lambda x: x\n", "class A:\n    pass\n",
                 "@deco\ndef f():\n    return 1\n", "c = a @ b\n",
                 "async def f():\n    return 1\n", "x = await g()\n"):
        with pytest.raises(CodegenError) as info:
            run(code)
        assert info.value.kind == "UnsupportedConstruct"


def test_codegen_error_carries_node_id():
    with pytest.raises(CodegenError) as info:
        run("c = a @ b\n")
    assert info.value.node_id >= 0


def test_lambda_count_property():
    result = run("a = f(1) + g(2)\n")
    assert result.lambda_count == len(result.records) == 3
