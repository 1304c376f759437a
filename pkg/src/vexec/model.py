"""Model bundle: one parameter store wiring all trainable components.

Initialization order is fixed (guesser, executor, builtin table, loss
heads, misuse heads) so a seed fully determines every parameter byte.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .codegen import GenerationResult, generate
from .config import Config
from .executor import Executor, ExecutorSemantics, NullSemantics
from .guesser import Guesser, Vocabulary
from .interpreter import BuiltinTable, Interpreter
from .parser import parse


class Model:
    def __init__(self, config: Config, vocab: Vocabulary, store: ad.ParameterStore):
        self.config = config
        self.vocab = vocab
        self.store = store
        self.executor = Executor(store, config)
        self.builtins = BuiltinTable(store, config)
        self.guesser = Guesser(
            store, vocab, config,
            fallback_row=lambda: self.builtins.row("val_obj_val_default"))
        self.semantics = ExecutorSemantics(self.executor)

    @classmethod
    def fresh(cls, config: Config, vocab: Vocabulary, seed: int | None = None) -> "Model":
        from .misuse import init_head_params
        from .training import init_loss_params
        store = ad.ParameterStore()
        rng = np.random.default_rng(config.seed if seed is None else seed)
        Guesser.init_params(store, rng, vocab, config)
        Executor.init_params(store, rng, config)
        BuiltinTable.init_params(store, rng, config)
        init_loss_params(store, rng, config)
        init_head_params(store, rng, config)
        return cls(config, vocab, store)

    def interpreter(self, semantics=None) -> Interpreter:
        return Interpreter(semantics if semantics is not None else self.semantics,
                           self.builtins, self.config)

    def run(self, source: str, interp: Interpreter | None = None) -> GenerationResult:
        """Parse, encode, and execute one script with the real executor."""
        tree = parse(source)
        encoding = self.guesser.encode(source)
        if interp is None:
            interp = self.interpreter()
        return generate(tree, interp, self.guesser, encoding, self.executor)

    def dry_run(self, source: str, interp: Interpreter | None = None) -> GenerationResult:
        """Execute with zero semantics and zero guesses: identical trace
        shape and object ids at a fraction of the cost, no tape."""
        tree = parse(source)
        if interp is None:
            interp = self.interpreter(semantics=NullSemantics(self.config.h))
        null_guesser = _NullGuesses(self.config.h)
        return generate(tree, interp, null_guesser, None, self.executor)


class _NullGuesses:
    """Stand-in guess source for dry runs: every node guesses to zeros."""

    def __init__(self, h: int):
        self._zero = ad.Tensor(np.zeros((1, h)))

    def guess_vector(self, node, encoding) -> ad.Tensor:
        return self._zero
