"""The lambda network: one attention encoder models every function call.

A call is laid out as a row sequence [theta, c_1..c_M, a_1..a_N]: the
currying signature first, then the control-flow contexts (outermost first),
then the arguments.  Each argument is the concatenation of its guessed and
executed vectors projected back to width H.  Role embeddings separate the
three segments; position embeddings order contexts and arguments.  The
return value is read at the signature position; the rows aligned with the
arguments are exposed for argument-level heads.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .config import Config
from .interpreter import InterpreterFault
from .nets import encoder_forward, init_encoder, linear


@dataclass
class ExecutorOutput:
    ret: ad.Tensor               # (1, H)
    arg_outputs: list            # N tensors of shape (1, H), aligned with args


ROLE_SIGNATURE = 0
ROLE_CONTEXT = 1
ROLE_ARGUMENT = 2


class Executor:
    PREFIX = "executor"

    def __init__(self, store: ad.ParameterStore, config: Config):
        self.store = store
        self.config = config

    @classmethod
    def init_params(cls, store: ad.ParameterStore, rng, config: Config):
        h = config.h
        store.add(f"{cls.PREFIX}.arg_proj.w", rng.normal(0.0, 0.02, size=(2 * h, h)))
        store.add(f"{cls.PREFIX}.arg_proj.b", rng.normal(0.0, 0.02, size=(1, h)))
        store.add(f"{cls.PREFIX}.role_emb", rng.normal(0.0, 0.02, size=(3, h)))
        store.add(f"{cls.PREFIX}.ctx_pos_emb", rng.normal(0.0, 0.02, size=(config.max_contexts, h)))
        store.add(f"{cls.PREFIX}.arg_pos_emb", rng.normal(0.0, 0.02, size=(config.max_args, h)))
        store.add(f"{cls.PREFIX}.unpack_idx_emb", rng.normal(0.0, 0.02, size=(config.max_args, h)))
        init_encoder(store, rng, cls.PREFIX, config.executor_layers, h, config.ffn_mult)

    def _check_row(self, t: ad.Tensor, what: str) -> None:
        if t.shape != (1, self.config.h):
            raise InterpreterFault(f"{what} has shape {t.shape}, expected (1, {self.config.h})")

    def execute(self, theta: ad.Tensor, contexts: list, arg_pairs: list) -> ExecutorOutput:
        config = self.config
        if len(arg_pairs) > config.max_args:
            raise InterpreterFault(f"{len(arg_pairs)} args exceed cap {config.max_args}")
        if len(contexts) > config.max_contexts:
            raise InterpreterFault(f"{len(contexts)} contexts exceed cap {config.max_contexts}")
        self._check_row(theta, "theta")
        role = self.store[f"{self.PREFIX}.role_emb"]
        rows = [ad.add(theta, ad.row(role, ROLE_SIGNATURE))]
        for i, ctx in enumerate(contexts):
            self._check_row(ctx, f"context {i}")
            pos = ad.row(self.store[f"{self.PREFIX}.ctx_pos_emb"], i)
            rows.append(ad.add(ad.add(ctx, ad.row(role, ROLE_CONTEXT)), pos))
        for j, (guessed, executed) in enumerate(arg_pairs):
            self._check_row(guessed, f"arg {j} guessed")
            self._check_row(executed, f"arg {j} executed")
            projected = linear(self.store, f"{self.PREFIX}.arg_proj",
                               ad.concat([guessed, executed], axis=1))
            pos = ad.row(self.store[f"{self.PREFIX}.arg_pos_emb"], j)
            rows.append(ad.add(ad.add(projected, ad.row(role, ROLE_ARGUMENT)), pos))
        x = rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)
        y = encoder_forward(self.store, self.PREFIX, config.executor_layers,
                            config.executor_heads, x)
        n = len(arg_pairs)
        base = 1 + len(contexts)
        return ExecutorOutput(
            ret=ad.slice_rows(y, 0, 1),
            arg_outputs=[ad.slice_rows(y, base + j, base + j + 1) for j in range(n)],
        )

    def execute_batch(self, inputs: list) -> list:
        """Batched entry point: each item is (theta, contexts, arg_pairs).

        Items are evaluated one by one inside this call so results are
        bit-identical to serial execution regardless of batch composition.
        """
        return [self.execute(theta, ctx, args) for theta, ctx, args in inputs]

    def curry(self, theta: ad.Tensor):
        def bound(contexts: list, arg_pairs: list) -> ExecutorOutput:
            return self.execute(theta, contexts, arg_pairs)
        return bound

    def unpack_index_row(self, i: int) -> ad.Tensor:
        if not 0 <= i < self.config.max_args:
            raise InterpreterFault(f"unpack index {i} out of range")
        return ad.row(self.store[f"{self.PREFIX}.unpack_idx_emb"], i)


class NullSemantics:
    """Dry-run backend: every call returns zeros and records no tape.

    Control flow in lowering never depends on vector values, so a zero
    backend exercises the exact same code paths at a fraction of the cost.
    """

    def __init__(self, h: int):
        import numpy as np
        self._zero = ad.Tensor(np.zeros((1, h)))

    def execute(self, theta, contexts, arg_pairs) -> ExecutorOutput:
        return ExecutorOutput(ret=self._zero, arg_outputs=[self._zero] * len(arg_pairs))


class ExecutorSemantics:
    """Adapter giving the interpreter the trained executor as its backend."""

    def __init__(self, executor: Executor):
        self.executor = executor

    def execute(self, theta, contexts, arg_pairs) -> ExecutorOutput:
        return self.executor.execute(theta, contexts, arg_pairs)
