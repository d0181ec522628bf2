"""Numba-jitted kernels. Same signatures and semantics as numpy_impl.

Row-parallel loops only; reductions that cross rows (embedding scatter,
layernorm gain/bias grads) stay serial so results are deterministic.
"""

import warnings

import numpy as np

with warnings.catch_warnings():
    # the TBB-version notice on import is harmless; the workqueue/OMP
    # threading layers serve fine
    warnings.filterwarnings("ignore", message=".*TBB.*")
    from numba import njit, prange

NAME = "numba"


@njit(parallel=True, cache=True)
def _ln_fwd(x, gain, bias, eps, y, mean, rstd):
    rows, d = x.shape
    for i in prange(rows):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mu = s / d
        q = 0.0
        for j in range(d):
            t = x[i, j] - mu
            q += t * t
        r = 1.0 / np.sqrt(q / d + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * r * gain[j] + bias[j]


def layernorm_fwd(x, gain, bias, eps):
    y = np.empty_like(x)
    mean = np.empty(x.shape[0], dtype=x.dtype)
    rstd = np.empty(x.shape[0], dtype=x.dtype)
    _ln_fwd(x, gain, bias, eps, y, mean, rstd)
    return y, mean, rstd


@njit(cache=True)
def _ln_bwd(g, x, mean, rstd, gain, dx, dgain, dbias):
    rows, d = x.shape
    for i in range(rows):
        mu = mean[i]
        r = rstd[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xh = (x[i, j] - mu) * r
            gh = g[i, j] * gain[j]
            m1 += gh
            m2 += gh * xh
            dgain[j] += g[i, j] * xh
            dbias[j] += g[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xh = (x[i, j] - mu) * r
            dx[i, j] = r * (g[i, j] * gain[j] - m1 - xh * m2)


def layernorm_bwd(g, x, mean, rstd, gain):
    dx = np.empty_like(x)
    dgain = np.zeros(x.shape[1], dtype=np.float64)
    dbias = np.zeros(x.shape[1], dtype=np.float64)
    _ln_bwd(g, x, mean, rstd, gain, dx, dgain, dbias)
    return dx, dgain.astype(x.dtype), dbias.astype(x.dtype)


@njit(parallel=True, cache=True)
def _causal_softmax_fwd(scores, probs):
    rows, n, _ = scores.shape
    for rr in prange(rows * n):
        r = rr // n
        i = rr % n
        m = scores[r, i, 0]
        for j in range(1, i + 1):
            if scores[r, i, j] > m:
                m = scores[r, i, j]
        z = 0.0
        for j in range(i + 1):
            e = np.exp(scores[r, i, j] - m)
            probs[r, i, j] = e
            z += e
        for j in range(i + 1):
            probs[r, i, j] /= z
        for j in range(i + 1, n):
            probs[r, i, j] = 0.0


def causal_softmax_fwd(scores):
    probs = np.empty_like(scores)
    _causal_softmax_fwd(scores, probs)
    return probs


@njit(parallel=True, cache=True)
def _causal_softmax_bwd(g, probs, ds):
    rows, n, _ = probs.shape
    for rr in prange(rows * n):
        r = rr // n
        i = rr % n
        dot = 0.0
        for j in range(i + 1):
            dot += g[r, i, j] * probs[r, i, j]
        for j in range(i + 1):
            ds[r, i, j] = probs[r, i, j] * (g[r, i, j] - dot)
        for j in range(i + 1, n):
            ds[r, i, j] = 0.0


def causal_softmax_bwd(g, probs):
    ds = np.empty_like(probs)
    _causal_softmax_bwd(g, probs, ds)
    return ds


@njit(parallel=True, cache=True)
def _xent_fwd(logits, targets, losses, lse):
    rows, n = logits.shape
    for i in prange(rows):
        m = logits[i, 0]
        for j in range(1, n):
            if logits[i, j] > m:
                m = logits[i, j]
        z = 0.0
        for j in range(n):
            z += np.exp(logits[i, j] - m)
        l = m + np.log(z)
        lse[i] = l
        losses[i] = l - logits[i, targets[i]]


def softmax_xent_fwd(logits, targets):
    losses = np.empty(logits.shape[0], dtype=logits.dtype)
    lse = np.empty(logits.shape[0], dtype=logits.dtype)
    _xent_fwd(logits, targets, losses, lse)
    return losses, lse


@njit(parallel=True, cache=True)
def _xent_bwd(g, logits, targets, lse, d):
    rows, n = logits.shape
    for i in prange(rows):
        gi = g[i]
        l = lse[i]
        for j in range(n):
            d[i, j] = np.exp(logits[i, j] - l) * gi
        d[i, targets[i]] -= gi


def softmax_xent_bwd(g, logits, targets, lse):
    d = np.empty_like(logits)
    _xent_bwd(g, logits, targets, lse, d)
    return d


@njit(cache=True)
def _emb_bwd(idx, g, table_grad):
    rows, d = g.shape
    for i in range(rows):
        t = idx[i]
        for j in range(d):
            table_grad[t, j] += g[i, j]


def embedding_bwd(idx, g, table_grad):
    _emb_bwd(idx, g, table_grad)


@njit(parallel=True, cache=True)
def _adamw(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    n = p.shape[0]
    decay = 1.0 - lr * weight_decay
    for i in prange(n):
        if weight_decay != 0.0:
            p[i] *= decay
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)


def adamw_step(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    _adamw(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2)


@njit(parallel=True, cache=True)
def _ranks(logits, targets, out):
    rows, n = logits.shape
    for i in prange(rows):
        ti = targets[i]
        t = logits[i, ti]
        rank = 1
        for j in range(n):
            if logits[i, j] > t:
                rank += 1
            elif logits[i, j] == t and j < ti:
                rank += 1
        out[i] = rank


def target_ranks(logits, targets):
    out = np.empty(logits.shape[0], dtype=np.int64)
    _ranks(logits, targets, out)
    return out
