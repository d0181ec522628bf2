"""Pure-numpy reference implementations of the hot kernels.

Semantics here are the contract; the numba backend must match these
outputs (up to float accumulation order).
"""

import numpy as np

NAME = "numpy"


def layernorm_fwd(x, gain, bias, eps):
    """Row-wise layer norm over the last axis of a 2-d array.

    Returns (y, mean, rstd); mean/rstd are cached for the backward pass.
    """
    mean = x.mean(axis=1)
    var = np.square(x - mean[:, None]).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gain + bias
    return y.astype(x.dtype, copy=False), mean, rstd


def layernorm_bwd(g, x, mean, rstd, gain):
    xhat = (x - mean[:, None]) * rstd[:, None]
    gh = g * gain
    m1 = gh.mean(axis=1)
    m2 = (gh * xhat).mean(axis=1)
    dx = rstd[:, None] * (gh - m1[:, None] - xhat * m2[:, None])
    dgain = (g * xhat).sum(axis=0)
    dbias = g.sum(axis=0)
    return dx.astype(x.dtype, copy=False), dgain, dbias


def causal_softmax_fwd(scores):
    """Softmax over the last axis of (rows, n, n) scores, position i
    attending only to columns 0..i. Disallowed entries come out as 0.
    """
    n = scores.shape[-1]
    allowed = np.tril(np.ones((n, n), dtype=bool))
    neg = scores.dtype.type(-np.inf)
    s = np.where(allowed, scores, neg)
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return (e / e.sum(axis=-1, keepdims=True)).astype(scores.dtype, copy=False)


def causal_softmax_bwd(g, probs):
    dot = (g * probs).sum(axis=-1, keepdims=True)
    return (probs * (g - dot)).astype(probs.dtype, copy=False)


def softmax_xent_fwd(logits, targets):
    """Per-row -log softmax(logits)[target]. Returns (losses, lse)."""
    rows = np.arange(logits.shape[0])
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    losses = lse - logits[rows, targets]
    return losses.astype(logits.dtype, copy=False), lse.astype(logits.dtype, copy=False)


def softmax_xent_bwd(g, logits, targets, lse):
    rows = np.arange(logits.shape[0])
    d = np.exp(logits - lse[:, None]) * g[:, None]
    d[rows, targets] -= g
    return d.astype(logits.dtype, copy=False)


def embedding_bwd(idx, g, table_grad):
    """Scatter-add row gradients g (R, d) into table_grad at idx (R,)."""
    np.add.at(table_grad, idx, g)


def adamw_step(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    """Decoupled-weight-decay adaptive update, in place on flat arrays."""
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def target_ranks(logits, targets):
    """1-based rank of targets under descending logits; ties go to the
    lower item index.
    """
    rows = np.arange(logits.shape[0])
    t = logits[rows, targets]
    greater = (logits > t[:, None]).sum(axis=1)
    idx = np.arange(logits.shape[1])
    tied_lower = ((logits == t[:, None]) & (idx[None, :] < targets[:, None])).sum(axis=1)
    return (greater + tied_lower + 1).astype(np.int64)
