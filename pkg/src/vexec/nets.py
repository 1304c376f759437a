"""Shared attention-encoder building blocks for the guesser, executor and heads.

Each encoder stack is a pre-norm transformer: x + attn(ln(x)) followed by
x + ffn(ln(x)).  Parameters live in a ParameterStore under a caller-chosen
prefix so the same code drives every stack in the model.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def init_linear(store: ad.ParameterStore, rng, name: str, n_in: int, n_out: int, scale: float = 0.02):
    store.add(name + ".w", rng.normal(0.0, scale, size=(n_in, n_out)))
    store.add(name + ".b", np.zeros((1, n_out)))


def linear(store: ad.ParameterStore, name: str, x: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.matmul(x, store[name + ".w"]), store[name + ".b"])


def init_mlp(store: ad.ParameterStore, rng, name: str, n_in: int, n_hidden: int,
             n_out: int, scale: float = 0.02):
    init_linear(store, rng, name + ".fc1", n_in, n_hidden, scale)
    init_linear(store, rng, name + ".fc2", n_hidden, n_out, scale)


def mlp(store: ad.ParameterStore, name: str, x: ad.Tensor) -> ad.Tensor:
    return linear(store, name + ".fc2", ad.gelu(linear(store, name + ".fc1", x)))


def init_encoder(store: ad.ParameterStore, rng, prefix: str, layers: int, width: int, ffn_mult: int = 4):
    for i in range(layers):
        base = f"{prefix}.enc{i}"
        for part in ("wq", "wk", "wv", "wo"):
            store.add(f"{base}.{part}", rng.normal(0.0, 0.02, size=(width, width)))
            store.add(f"{base}.{part}_b", np.zeros((1, width)))
        store.add(f"{base}.ln1_g", np.ones((1, width)))
        store.add(f"{base}.ln1_b", np.zeros((1, width)))
        store.add(f"{base}.ln2_g", np.ones((1, width)))
        store.add(f"{base}.ln2_b", np.zeros((1, width)))
        init_linear(store, rng, f"{base}.ffn1", width, width * ffn_mult)
        init_linear(store, rng, f"{base}.ffn2", width * ffn_mult, width)


def encoder_forward(store: ad.ParameterStore, prefix: str, layers: int, heads: int,
                    x: ad.Tensor, valid_len: int | None = None) -> ad.Tensor:
    for i in range(layers):
        base = f"{prefix}.enc{i}"
        normed = ad.layer_norm(x, store[f"{base}.ln1_g"], store[f"{base}.ln1_b"])
        att = ad.attention_block(
            normed,
            store[f"{base}.wq"], store[f"{base}.wq_b"],
            store[f"{base}.wk"], store[f"{base}.wk_b"],
            store[f"{base}.wv"], store[f"{base}.wv_b"],
            store[f"{base}.wo"], store[f"{base}.wo_b"],
            heads, valid_len=valid_len)
        x = ad.add(x, att)
        normed = ad.layer_norm(x, store[f"{base}.ln2_g"], store[f"{base}.ln2_b"])
        ff = linear(store, f"{base}.ffn2", ad.gelu(linear(store, f"{base}.ffn1", normed)))
        x = ad.add(x, ff)
    return x
