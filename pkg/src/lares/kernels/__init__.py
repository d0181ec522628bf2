"""Backend dispatch for the hot numeric kernels.

Two interchangeable implementations live here: numba-jitted loops
(numba_impl) and vectorized numpy (numpy_impl). The active one is picked
at import time from the LARES_BACKEND environment variable:

    LARES_BACKEND=auto    use numba when importable, else numpy (default)
    LARES_BACKEND=numba   require numba, fail if unavailable
    LARES_BACKEND=numpy   pure numpy, no JIT

`set_backend` switches at runtime (used by the bench subcommand to time
both paths in one process).
"""

import os
import warnings

import numpy as np

_KERNELS = (
    "layernorm_fwd",
    "layernorm_bwd",
    "causal_softmax_fwd",
    "causal_softmax_bwd",
    "softmax_xent_fwd",
    "softmax_xent_bwd",
    "embedding_bwd",
    "adamw_step",
    "target_ranks",
)

_active = None


def _import_impl(name):
    if name == "numba":
        from . import numba_impl as impl
    elif name == "numpy":
        from . import numpy_impl as impl
    else:
        raise ValueError(f"unknown kernel backend {name!r}; expected 'numba', 'numpy' or 'auto'")
    return impl


def set_backend(name):
    """Activate a kernel backend ('numba', 'numpy', or 'auto')."""
    global _active
    if name == "auto":
        try:
            impl = _import_impl("numba")
        except ImportError:
            warnings.warn("numba unavailable, falling back to numpy kernels")
            impl = _import_impl("numpy")
    else:
        impl = _import_impl(name)
    for fn in _KERNELS:
        globals()[fn] = getattr(impl, fn)
    _active = impl.NAME
    return _active


def active_backend():
    return _active


def available_backends():
    out = ["numpy"]
    try:
        _import_impl("numba")
        out.insert(0, "numba")
    except ImportError:
        pass
    return out


def warmup(dtypes=(np.float32, np.float64)):
    """Trigger JIT compilation of every kernel on tiny inputs."""
    for dt in dtypes:
        x = np.ones((2, 4), dtype=dt)
        gain = np.ones(4, dtype=dt)
        bias = np.zeros(4, dtype=dt)
        y, mean, rstd = layernorm_fwd(x, gain, bias, 1e-8)
        layernorm_bwd(y, x, mean, rstd, gain)
        s = np.zeros((2, 3, 3), dtype=dt)
        p = causal_softmax_fwd(s)
        causal_softmax_bwd(p, p)
        t = np.zeros(2, dtype=np.int64)
        losses, lse = softmax_xent_fwd(x, t)
        softmax_xent_bwd(losses, x, t, lse)
        tg = np.zeros((3, 4), dtype=dt)
        embedding_bwd(t, x, tg)
        flat = np.ones(8, dtype=dt)
        adamw_step(flat.copy(), flat, flat.copy(), flat.copy(), 1e-3, 0.9, 0.999, 1e-8, 0.0, 0.1, 0.01)
        target_ranks(x, t)


set_backend(os.environ.get("LARES_BACKEND", "auto").lower())
