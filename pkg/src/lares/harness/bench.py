"""Latency benchmarks: forward wall-clock across reasoning depths (the
near-linear scaling check) and a numba-vs-numpy kernel comparison."""

import time

import numpy as np

from .. import kernels
from .. import tensor as T
from ..model import ModelParameters, forward_states
from ..seeding import make_rng


def linear_fit(xs, ys):
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def _forward_once(params, idx, depth, t0):
    with T.no_grad():
        forward_states(params, idx, depth, t0)


def bench_depths(arch, num_items, max_len, depths, batch_size=1024, repeats=5, seed=0):
    """Median forward time per depth on a synthetic batch.

    Returns (rows, fit) where rows carry per-depth seconds and the ratio
    against the shallowest depth, and fit is the linear time-vs-depth
    regression.
    """
    kernels.warmup()
    params = ModelParameters.initialize(arch, num_items, max_len, seed)
    rng = make_rng(seed, 12345)
    idx = rng.integers(0, num_items, (batch_size, max_len))
    t0 = rng.normal(0.0, arch.sigma1, (batch_size, max_len, arch.hidden_dim)).astype(arch.np_dtype)

    depths = sorted(depths)
    _forward_once(params, idx, depths[0], t0)  # warm caches
    rows = []
    for depth in depths:
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            _forward_once(params, idx, depth, t0)
            times.append(time.perf_counter() - start)
        rows.append({"depth": depth, "seconds_mean": float(np.median(times)), "seconds_min": float(min(times))})
    base = rows[0]["seconds_mean"]
    for row in rows:
        row["ratio_vs_first"] = row["seconds_mean"] / base
    slope, intercept, r2 = linear_fit([r["depth"] for r in rows], [r["seconds_mean"] for r in rows])
    fit = {"slope": slope, "intercept": intercept, "r_squared": r2, "backend": kernels.active_backend()}
    return rows, fit


def _time_call(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def compare_backends(rows_n=4096, dim=256, catalog=8192, repeats=5, seed=0):
    """Per-kernel median times under each available backend."""
    rng = make_rng(seed, 999)
    x = rng.normal(0, 1, (rows_n, dim)).astype(np.float32)
    gain = np.ones(dim, dtype=np.float32)
    bias = np.zeros(dim, dtype=np.float32)
    logits = rng.normal(0, 1, (rows_n // 4, catalog)).astype(np.float32)
    targets = rng.integers(0, catalog, rows_n // 4)
    scores = rng.normal(0, 1, (rows_n // 8, 32, 32)).astype(np.float32)
    flat = rng.normal(0, 1, rows_n * dim).astype(np.float32)
    emb_idx = rng.integers(0, 1024, rows_n)

    def make_cases():
        y, mean, rstd = kernels.layernorm_fwd(x, gain, bias, 1e-8)
        probs = kernels.causal_softmax_fwd(scores)
        losses, lse = kernels.softmax_xent_fwd(logits, targets)
        return {
            "layernorm_fwd": lambda: kernels.layernorm_fwd(x, gain, bias, 1e-8),
            "layernorm_bwd": lambda: kernels.layernorm_bwd(y, x, mean, rstd, gain),
            "causal_softmax_fwd": lambda: kernels.causal_softmax_fwd(scores),
            "causal_softmax_bwd": lambda: kernels.causal_softmax_bwd(probs, probs),
            "softmax_xent_fwd": lambda: kernels.softmax_xent_fwd(logits, targets),
            "softmax_xent_bwd": lambda: kernels.softmax_xent_bwd(losses, logits, targets, lse),
            "embedding_bwd": lambda: kernels.embedding_bwd(emb_idx, x, np.zeros((1024, dim), np.float32)),
            "adamw_step": lambda: kernels.adamw_step(
                flat.copy(), flat, np.zeros_like(flat), np.zeros_like(flat),
                1e-3, 0.9, 0.999, 1e-8, 0.0, 0.1, 0.01,
            ),
            "target_ranks": lambda: kernels.target_ranks(logits, targets),
        }

    original = kernels.active_backend()
    per_backend = {}
    try:
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            kernels.warmup()
            cases = make_cases()
            per_backend[backend] = {name: _time_call(fn, repeats) for name, fn in cases.items()}
    finally:
        kernels.set_backend(original)

    names = list(next(iter(per_backend.values())))
    rows = []
    for name in names:
        row = {"kernel": name}
        for backend, results in per_backend.items():
            row[f"{backend}_ms"] = results[name] * 1e3
        if "numpy" in per_backend and "numba" in per_backend:
            row["speedup_numba"] = per_backend["numpy"][name] / max(per_backend["numba"][name], 1e-12)
        rows.append(row)
    return rows
