"""A small reverse-mode autodiff engine over numpy arrays.

Just enough ops for this package: dense matmul chains, embeddings,
layer norm, causal attention softmax, softmax cross-entropy, and the
elementwise pieces of clipped-surrogate objectives. Heavy per-row loops
are delegated to the kernels backend; everything else is numpy.

Gradients accumulate into `Tensor.grad` (a plain ndarray) on leaves with
`requires_grad=True`.
"""

import contextlib

import numpy as np

from . import kernels

_grad_enabled = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference passes)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, parents=(), bwd=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad and _grad_enabled[-1]
        self._parents = parents if self.requires_grad else ()
        self._bwd = bwd if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient requires a scalar output")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        _accum(self, grad)
        for node in reversed(topo):
            if node._bwd is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._bwd(node.grad)):
                if parent.requires_grad and g is not None:
                    _accum(parent, g)
            if node._parents:
                node.grad = None  # free interior grads; leaves keep theirs

    # operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add(self, -other)
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(-self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _accum(t, g):
    # Always copy on first write: backward functions may hand the same
    # array (or views of it) to sibling parents, and grads are later
    # mutated in place by +=.
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    """A leaf tensor that accumulates gradients (ignores no_grad scopes)."""
    t = Tensor(np.asarray(data))
    t.requires_grad = True
    return t


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _node(data, parents, bwd):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents, bwd=bwd)


# elementwise / linear ------------------------------------------------


def add(a, b):
    # Python scalars stay scalars so float32 data is not promoted.
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        return _node(a.data + b, (a,), lambda g: (g,))
    if isinstance(a, (int, float)):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), bwd)


def mul(a, b):
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        return _node(a.data * b, (a,), lambda g: (g * b,))
    if isinstance(a, (int, float)):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _node(out, (a, b), bwd)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _node(out, (a, b), bwd)


def relu(t):
    t = as_tensor(t)
    mask = t.data > 0
    return _node(np.where(mask, t.data, t.data.dtype.type(0)), (t,), lambda g: (g * mask,))


def exp(t):
    t = as_tensor(t)
    out = np.exp(t.data)
    return _node(out, (t,), lambda g: (g * out,))


def log(t):
    t = as_tensor(t)
    return _node(np.log(t.data), (t,), lambda g: (g / t.data,))


def clip(t, lo, hi):
    t = as_tensor(t)
    out = np.clip(t.data, lo, hi)
    mask = (t.data > lo) & (t.data < hi)
    return _node(out, (t,), lambda g: (g * mask,))


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data

    def bwd(g):
        return _unbroadcast(g * take_a, a.data.shape), _unbroadcast(g * ~take_a, b.data.shape)

    return _node(np.where(take_a, a.data, b.data), (a, b), bwd)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data

    def bwd(g):
        return _unbroadcast(g * take_a, a.data.shape), _unbroadcast(g * ~take_a, b.data.shape)

    return _node(np.where(take_a, a.data, b.data), (a, b), bwd)


def tsum(t, axis=None):
    t = as_tensor(t)
    out = t.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, t.data.shape).astype(t.data.dtype, copy=False),)
        return (np.broadcast_to(np.expand_dims(g, axis), t.data.shape).astype(t.data.dtype, copy=False),)

    return _node(np.asarray(out), (t,), bwd)


def tmean(t, axis=None):
    t = as_tensor(t)
    n = t.data.size if axis is None else t.data.shape[axis]
    return tsum(t, axis) * (1.0 / n)


# shape plumbing ------------------------------------------------------


def reshape(t, shape):
    t = as_tensor(t)
    return _node(t.data.reshape(shape), (t,), lambda g: (g.reshape(t.data.shape),))


def transpose(t, axes):
    t = as_tensor(t)
    inv = np.argsort(axes)
    return _node(t.data.transpose(axes), (t,), lambda g: (g.transpose(inv),))


def narrow_last(t, start, size):
    t = as_tensor(t)

    def bwd(g):
        z = np.zeros_like(t.data)
        z[..., start : start + size] = g
        return (z,)

    return _node(np.ascontiguousarray(t.data[..., start : start + size]), (t,), bwd)


def concat_last(a, b):
    a, b = as_tensor(a), as_tensor(b)
    na = a.data.shape[-1]

    def bwd(g):
        return np.ascontiguousarray(g[..., :na]), np.ascontiguousarray(g[..., na:])

    return _node(np.concatenate([a.data, b.data], axis=-1), (a, b), bwd)


# lookups -------------------------------------------------------------


def embedding(table, idx):
    """Row lookup table[idx] with scatter-add backward into the table."""
    idx = np.asarray(idx)
    out = table.data[idx]

    def bwd(g):
        dt = np.zeros_like(table.data)
        kernels.embedding_bwd(
            np.ascontiguousarray(idx.ravel().astype(np.int64)),
            np.ascontiguousarray(g.reshape(-1, g.shape[-1])),
            dt,
        )
        return (dt,)

    return _node(out, (table,), bwd)


def gather_rows(x, pos):
    """Select x[i, pos[i], :] from a (B, n, d) tensor -> (B, d)."""
    pos = np.asarray(pos)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, pos]

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[rows, pos] = g
        return (dx,)

    return _node(np.ascontiguousarray(out), (x,), bwd)


# fused kernel ops ----------------------------------------------------


def layernorm(x, gain, bias, eps=1e-8):
    """Layer norm over the last axis with learnable gain/bias."""
    d = x.data.shape[-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y2, mean, rstd = kernels.layernorm_fwd(x2, gain.data, bias.data, eps)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = kernels.layernorm_bwd(g2, x2, mean, rstd, gain.data)
        return dx.reshape(x.data.shape), dgain, dbias

    return _node(y2.reshape(x.data.shape), (x, gain, bias), bwd)


def causal_softmax(scores):
    """Masked softmax over the last axis of (..., n, n) attention scores."""
    n = scores.data.shape[-1]
    s3 = np.ascontiguousarray(scores.data.reshape(-1, n, n))
    probs = kernels.causal_softmax_fwd(s3)

    def bwd(g):
        g3 = np.ascontiguousarray(g.reshape(-1, n, n))
        return (kernels.causal_softmax_bwd(g3, probs).reshape(scores.data.shape),)

    return _node(probs.reshape(scores.data.shape), (scores,), bwd)


def softmax_xent(logits, targets):
    """Per-row -log softmax(logits)[target]; returns a (rows,) tensor."""
    targets = np.ascontiguousarray(np.asarray(targets, dtype=np.int64))
    l2 = np.ascontiguousarray(logits.data)
    losses, lse = kernels.softmax_xent_fwd(l2, targets)

    def bwd(g):
        return (kernels.softmax_xent_bwd(np.ascontiguousarray(g), l2, targets, lse),)

    return _node(losses, (logits,), bwd)


def dropout(x, rate, rng):
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    keep *= x.data.dtype.type(1.0 / (1.0 - rate))
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


def l2_normalize(x, eps=1e-12):
    """Row-normalize the last axis to unit Euclidean norm."""
    norm = np.sqrt(np.square(x.data).sum(axis=-1, keepdims=True))
    r = 1.0 / np.maximum(norm, eps)
    y = x.data * r

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * dot) * r,)

    return _node(y, (x,), bwd)
