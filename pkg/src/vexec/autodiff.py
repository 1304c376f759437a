"""Reverse-mode automatic differentiation over float64 numpy arrays.

The engine keeps a dynamic tape.  Every operation eagerly computes its value
and records its parents together with a closure that maps the output gradient
to per-parent gradient contributions.  ``backward`` walks the tape once in
reverse topological order and accumulates gradients on the leaves.

Design constraints served here:

  * all arithmetic is 64-bit, so finite-difference checks can resolve
    relative errors down to 1e-4 with headroom,
  * forward values never depend on tape bookkeeping, so replaying a
    computation at fixed parameters is bit-exact,
  * no global state: graphs are reachable only through their result tensors,
    which keeps concurrent graph construction safe as long as each graph is
    built by one thread.
"""

from __future__ import annotations

import math

import numpy as np


class EngineFault(RuntimeError):
    """Internal fault inside the numeric engine (shape, NaN, tape misuse)."""


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_done")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None):
        self.data = _as_f64(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data) -> Tensor:
    return Tensor(data)


def _result(data, parents, vjp) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=tuple(parents), vjp=vjp)


def backward(loss: Tensor) -> None:
    """Accumulate gradients of ``loss`` into every reachable leaf tensor."""
    if loss.data.size != 1:
        raise EngineFault(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise EngineFault("backward called twice on the same tape")
    if not loss.requires_grad:
        raise EngineFault("loss does not depend on any parameter")
    loss._done = True

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _result(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _result(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _result(out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def vjp(g):
        return (g * s,)

    return _result(out, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise EngineFault("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise EngineFault(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return _result(out, (a, b), vjp)


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def vjp(g):
        grads = []
        start = 0
        for size in sizes:
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + size)
            grads.append(g[tuple(idx)])
            start += size
        return tuple(grads)

    return _result(out, tuple(parts), vjp)


def slice_rows(t: Tensor, start: int, stop: int) -> Tensor:
    out = t.data[start:stop]

    def vjp(g):
        full = np.zeros_like(t.data)
        full[start:stop] = g
        return (full,)

    return _result(out, (t,), vjp)


def row(t: Tensor, i: int) -> Tensor:
    return slice_rows(t, i, i + 1)


def slice_cols(t: Tensor, start: int, stop: int) -> Tensor:
    out = t.data[:, start:stop]

    def vjp(g):
        full = np.zeros_like(t.data)
        full[:, start:stop] = g
        return (full,)

    return _result(out, (t,), vjp)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer index array ``ids``."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise EngineFault("embedding_lookup expects a 1-D index array")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise EngineFault("embedding index out of range")
    out = table.data[idx]

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(out, (table,), vjp)


def max_pool_rows(t: Tensor) -> Tensor:
    """Column-wise max over the rows of a (L, H) tensor, keeping shape (1, H).

    Ties route the gradient to the first maximal row, matching numpy argmax.
    """
    if t.data.ndim != 2 or t.data.shape[0] == 0:
        raise EngineFault(f"max_pool_rows expects a non-empty 2-D tensor, got {t.data.shape}")
    arg = np.argmax(t.data, axis=0)
    out = t.data[arg, np.arange(t.data.shape[1])][None, :]

    def vjp(g):
        full = np.zeros_like(t.data)
        full[arg, np.arange(t.data.shape[1])] = g[0]
        return (full,)

    return _result(out, (t,), vjp)


def softmax(t: Tensor) -> Tensor:
    """Row-wise softmax over the last axis of a 2-D tensor."""
    z = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (t,), vjp)


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise layer normalization with learned gain and bias."""
    mu = t.data.mean(axis=-1, keepdims=True)
    centered = t.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data
    n = t.data.shape[-1]

    def vjp(g):
        gxhat = g * gain.data
        term = gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        gt = term * inv
        ggain = _unbroadcast(g * xhat, gain.data.shape)
        gbias = _unbroadcast(g, bias.data.shape)
        return (gt, ggain, gbias)

    return _result(out, (t, gain, bias), vjp)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(t: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh formulation."""
    x = t.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def vjp(g):
        sech2 = 1.0 - th * th
        d = 0.5 * (1.0 + th) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * d,)

    return _result(out, (t,), vjp)


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _result(out, (t,), vjp)


def sigmoid(t: Tensor) -> Tensor:
    out = np.where(t.data >= 0, 1.0 / (1.0 + np.exp(-t.data)), np.exp(t.data) / (1.0 + np.exp(t.data)))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _result(out, (t,), vjp)


def sum_all(t: Tensor) -> Tensor:
    out = t.data.sum()

    def vjp(g):
        return (np.broadcast_to(g, t.data.shape).copy(),)

    return _result(out, (t,), vjp)


def mean_all(t: Tensor) -> Tensor:
    n = t.data.size
    out = t.data.sum() / n

    def vjp(g):
        return (np.broadcast_to(g / n, t.data.shape).copy(),)

    return _result(out, (t,), vjp)


def logsumexp(t: Tensor) -> Tensor:
    """Stable log-sum-exp over all entries, returning a scalar tensor."""
    m = t.data.max()
    e = np.exp(t.data - m)
    s = e.sum()
    out = m + np.log(s)

    def vjp(g):
        return (g * e / s,)

    return _result(out, (t,), vjp)


def bce_with_logits(logit: Tensor, target: float) -> Tensor:
    """Binary cross entropy on a scalar logit, numerically stable."""
    x = float(logit.data.reshape(-1)[0])
    out = max(x, 0.0) - x * target + math.log1p(math.exp(-abs(x)))
    sig = 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))

    def vjp(g):
        return (np.full_like(logit.data, float(g) * (sig - target)),)

    return _result(np.float64(out), (logit,), vjp)


def cross_entropy_logits(logits: Tensor, target: int) -> Tensor:
    """Softmax cross entropy of a (1, K) or (K,) logit tensor against an index."""
    flat = logits.data.reshape(-1)
    if not 0 <= target < flat.size:
        raise EngineFault("cross entropy target out of range")
    m = flat.max()
    e = np.exp(flat - m)
    s = e.sum()
    out = (m + np.log(s)) - flat[target]
    probs = e / s

    def vjp(g):
        gl = probs.copy()
        gl[target] -= 1.0
        return ((float(g) * gl).reshape(logits.data.shape),)

    return _result(np.float64(out), (logits,), vjp)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def attention_block(x: Tensor, wq, bq, wk, bk, wv, bv, wo, bo, n_heads: int,
                    valid_len: int | None = None) -> Tensor:
    """Multi-head self-attention over an (L, H) sequence.

    When ``valid_len`` is given, rows at and beyond it are padding: they are
    sliced away before any arithmetic and the output is zero-padded back, so
    padded rows cannot perturb real rows even in the last bit.
    """
    total = x.data.shape[0]
    if valid_len is not None and valid_len < total:
        x_used = slice_rows(x, 0, valid_len)
    else:
        x_used = x
        valid_len = total
    h = x_used.data.shape[1]
    if h % n_heads != 0:
        raise EngineFault(f"width {h} not divisible by {n_heads} heads")
    d = h // n_heads

    q = add(matmul(x_used, wq), bq)
    k = add(matmul(x_used, wk), bk)
    v = add(matmul(x_used, wv), bv)
    heads = []
    inv = 1.0 / math.sqrt(d)
    for i in range(n_heads):
        qi = slice_cols(q, i * d, (i + 1) * d)
        ki = slice_cols(k, i * d, (i + 1) * d)
        vi = slice_cols(v, i * d, (i + 1) * d)
        att = softmax(scale(matmul(qi, transpose(ki)), inv))
        heads.append(matmul(att, vi))
    merged = heads[0] if n_heads == 1 else concat(heads, axis=1)
    out = add(matmul(merged, wo), bo)
    if valid_len < total:
        pad = Tensor(np.zeros((total - valid_len, h)))
        out = concat([out, pad], axis=0)
    return out


def transpose(t: Tensor) -> Tensor:
    out = t.data.T.copy()

    def vjp(g):
        return (g.T,)

    return _result(out, (t,), vjp)


# ---------------------------------------------------------------------------
# parameters and optimization
# ---------------------------------------------------------------------------


class ParameterStore:
    """Named trainable tensors plus first/second Adam moments and step count."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise EngineFault(f"duplicate parameter {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad_of(self, name: str) -> np.ndarray:
        g = self._params[name].grad
        if g is None:
            return np.zeros_like(self._params[name].data)
        return g

    def n_elements(self) -> int:
        return sum(t.data.size for t in self._params.values())


def optimizer_step(store: ParameterStore, lr: float, betas=(0.9, 0.999),
                   weight_decay: float = 0.0, eps: float = 1e-8) -> None:
    """One update of a decoupled weight-decay adaptive optimizer."""
    b1, b2 = betas
    store.step += 1
    t = store.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name in store.names():
        p = store[name]
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise EngineFault(f"non-finite gradient for {name!r}")
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= lr * update
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        if not np.all(np.isfinite(p.data)):
            raise EngineFault(f"non-finite parameter {name!r} after update")


def linear_schedule(step: int, total_steps: int, peak_lr: float, warmup_frac: float = 0.05) -> float:
    """Linear warmup to ``peak_lr`` over the first ``warmup_frac`` of steps, then linear decay to zero."""
    if total_steps <= 0:
        raise EngineFault("schedule needs a positive total step count")
    warm = max(1, int(round(total_steps * warmup_frac)))
    if step < warm:
        return peak_lr * step / warm
    if step >= total_steps:
        return 0.0
    return peak_lr * (total_steps - step) / (total_steps - warm)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def gradient_check(loss_fn, store: ParameterStore, probes: int = 20, h: float = 1e-6,
                   rng: np.random.Generator | None = None, names=None) -> list[tuple[str, float]]:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild its graph from ``store`` on every call.  Returns
    one (parameter name, relative error) pair per probe; probes prefer
    entries whose analytic gradient is nonzero so the relative error is
    informative.
    """
    rng = rng or np.random.default_rng(0)
    store.zero_grad()
    loss = loss_fn()
    backward(loss)
    grads = {name: store.grad_of(name).copy() for name in store.names()}
    pool = names if names is not None else store.names()

    candidates = []
    for name in pool:
        flat = grads[name].reshape(-1)
        nz = np.flatnonzero(np.abs(flat) > 1e-12)
        for i in nz:
            candidates.append((name, int(i)))
    if not candidates:
        raise EngineFault("no parameter with nonzero gradient to probe")

    picks = rng.choice(len(candidates), size=min(probes, len(candidates)), replace=False)
    results = []
    for ci in np.asarray(picks).reshape(-1):
        name, idx = candidates[int(ci)]
        flat = store[name].data.reshape(-1)
        keep = flat[idx]
        flat[idx] = keep + h
        up = float(loss_fn().data)
        flat[idx] = keep - h
        down = float(loss_fn().data)
        flat[idx] = keep
        fd = (up - down) / (2 * h)
        an = grads[name].reshape(-1)[idx]
        rel = abs(an - fd) / max(1.0, abs(an), abs(fd))
        results.append((name, float(rel)))
    return results
