"""Call evaluator: row assembly, alignment, sensitivity, determinism."""

import numpy as np
import pytest

from vexec import autodiff as ad
from vexec.config import Config
from vexec.executor import (ROLE_ARGUMENT, ROLE_CONTEXT, ROLE_SIGNATURE,
                            Executor, ExecutorSemantics, NullSemantics)
from vexec.interpreter import InterpreterFault
from vexec.nets import encoder_forward, linear


@pytest.fixture
def config():
    return Config(h=8, executor_layers=1, executor_heads=2, max_args=4, max_contexts=3)


@pytest.fixture
def executor(config):
    store = ad.ParameterStore()
    Executor.init_params(store, np.random.default_rng(1), config)
    return Executor(store, config)


def rvec(h, seed):
    return ad.Tensor(np.random.default_rng(seed).normal(size=(1, h)))


def pair(h, seed):
    return (rvec(h, seed), rvec(h, seed + 1000))


def test_output_shapes(executor, config):
    out = executor.execute(rvec(config.h, 0),
                           [rvec(config.h, 1), rvec(config.h, 2)],
                           [pair(config.h, 3), pair(config.h, 4), pair(config.h, 5)])
    assert out.ret.shape == (1, config.h)
    assert len(out.arg_outputs) == 3
    assert all(a.shape == (1, config.h) for a in out.arg_outputs)


def test_no_contexts_no_args(executor, config):
    out = executor.execute(rvec(config.h, 0), [], [])
    assert out.ret.shape == (1, config.h)
    assert out.arg_outputs == []


def test_row_assembly_matches_manual_forward(executor, config):
    """Independent reassembly of the input rows reproduces the output bits."""
    h = config.h
    theta = rvec(h, 0)
    contexts = [rvec(h, 1), rvec(h, 2)]
    pairs = [pair(h, 3), pair(h, 4)]
    out = executor.execute(theta, contexts, pairs)

    store = executor.store
    role = store["executor.role_emb"].data
    ctx_pos = store["executor.ctx_pos_emb"].data
    arg_pos = store["executor.arg_pos_emb"].data
    rows = [theta.data + role[ROLE_SIGNATURE]]
    for i, ctx in enumerate(contexts):
        rows.append(ctx.data + role[ROLE_CONTEXT] + ctx_pos[i])
    for j, (g, e) in enumerate(pairs):
        projected = linear(store, "executor.arg_proj",
                           ad.concat([g, e], axis=1)).data
        rows.append(projected + role[ROLE_ARGUMENT] + arg_pos[j])
    x = ad.Tensor(np.concatenate(rows, axis=0))
    y = encoder_forward(store, "executor", config.executor_layers,
                        config.executor_heads, x)
    base = 1 + len(contexts)
    assert np.array_equal(out.ret.data, y.data[0:1])
    for j in range(len(pairs)):
        assert np.array_equal(out.arg_outputs[j].data, y.data[base + j:base + j + 1])


def test_argument_order_changes_output(executor, config):
    theta = rvec(config.h, 0)
    a, b = pair(config.h, 1), pair(config.h, 2)
    ret_ab = executor.execute(theta, [], [a, b]).ret.data
    ret_ba = executor.execute(theta, [], [b, a]).ret.data
    assert not np.allclose(ret_ab, ret_ba)


def test_context_changes_output(executor, config):
    theta = rvec(config.h, 0)
    args = [pair(config.h, 1)]
    bare = executor.execute(theta, [], args).ret.data
    framed = executor.execute(theta, [rvec(config.h, 9)], args).ret.data
    assert not np.allclose(bare, framed)


def test_context_order_changes_output(executor, config):
    theta = rvec(config.h, 0)
    c1, c2 = rvec(config.h, 1), rvec(config.h, 2)
    first = executor.execute(theta, [c1, c2], []).ret.data
    second = executor.execute(theta, [c2, c1], []).ret.data
    assert not np.allclose(first, second)


def test_signature_changes_output(executor, config):
    args = [pair(config.h, 1)]
    one = executor.execute(rvec(config.h, 0), [], args).ret.data
    two = executor.execute(rvec(config.h, 99), [], args).ret.data
    assert not np.allclose(one, two)


def test_guessed_half_of_pair_matters(executor, config):
    theta = rvec(config.h, 0)
    g, e = pair(config.h, 1)
    mixed = executor.execute(theta, [], [(g, e)]).ret.data
    doubled = executor.execute(theta, [], [(e, e)]).ret.data
    assert not np.allclose(mixed, doubled)


def test_determinism(executor, config):
    theta = rvec(config.h, 0)
    contexts = [rvec(config.h, 1)]
    pairs = [pair(config.h, 2)]
    first = executor.execute(theta, contexts, pairs).ret.data
    second = executor.execute(theta, contexts, pairs).ret.data
    assert np.array_equal(first, second)


def test_execute_batch_bit_equal_to_serial(executor, config):
    items = [(rvec(config.h, s), [rvec(config.h, s + 10)],
              [pair(config.h, s + 20)]) for s in range(3)]
    batched = executor.execute_batch(items)
    for item, out in zip(items, batched):
        solo = executor.execute(*item)
        assert np.array_equal(out.ret.data, solo.ret.data)
        for a, b in zip(out.arg_outputs, solo.arg_outputs):
            assert np.array_equal(a.data, b.data)


def test_curry_equivalence(executor, config):
    theta = rvec(config.h, 0)
    bound = executor.curry(theta)
    contexts = [rvec(config.h, 1)]
    pairs = [pair(config.h, 2)]
    assert np.array_equal(bound(contexts, pairs).ret.data,
                          executor.execute(theta, contexts, pairs).ret.data)


def test_dimension_faults(executor, config):
    good = rvec(config.h, 0)
    bad = ad.Tensor(np.zeros((1, config.h + 1)))
    with pytest.raises(InterpreterFault):
        executor.execute(bad, [], [])
    with pytest.raises(InterpreterFault):
        executor.execute(good, [bad], [])
    with pytest.raises(InterpreterFault):
        executor.execute(good, [], [(bad, good)])


def test_arg_and_context_caps_fault(executor, config):
    theta = rvec(config.h, 0)
    many_args = [pair(config.h, s) for s in range(config.max_args + 1)]
    with pytest.raises(InterpreterFault):
        executor.execute(theta, [], many_args)
    many_ctx = [rvec(config.h, s) for s in range(config.max_contexts + 1)]
    with pytest.raises(InterpreterFault):
        executor.execute(theta, many_ctx, [])


def test_unpack_index_rows(executor, config):
    rows = executor.store["executor.unpack_idx_emb"].data
    assert np.array_equal(executor.unpack_index_row(2).data, rows[2:3])
    with pytest.raises(InterpreterFault):
        executor.unpack_index_row(config.max_args)
    with pytest.raises(InterpreterFault):
        executor.unpack_index_row(-1)


def test_gradient_reaches_inputs_and_params(executor, config):
    theta = rvec(config.h, 0)
    theta.requires_grad = True
    g, e = pair(config.h, 1)
    g.requires_grad = True
    out = executor.execute(theta, [], [(g, e)])
    ad.backward(ad.sum_all(out.ret))
    assert theta.grad is not None and np.any(theta.grad != 0.0)
    assert g.grad is not None and np.any(g.grad != 0.0)
    proj = executor.store["executor.arg_proj.w"]
    assert proj.grad is not None and np.any(proj.grad != 0.0)


def test_null_semantics_returns_zeros(config):
    null = NullSemantics(config.h)
    out = null.execute(None, [], [(None, None), (None, None)])
    assert np.array_equal(out.ret.data, np.zeros((1, config.h)))
    assert len(out.arg_outputs) == 2


def test_executor_semantics_adapter(executor, config):
    adapter = ExecutorSemantics(executor)
    theta = rvec(config.h, 0)
    direct = executor.execute(theta, [], [])
    routed = adapter.execute(theta, [], [])
    assert np.array_equal(direct.ret.data, routed.ret.data)
