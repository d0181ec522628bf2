"""Decoupled-weight-decay adaptive gradient optimizer."""

import numpy as np

from . import kernels


class AdamW:
    """AdamW over named parameter tensors.

    Weight decay is skipped for 1-d tensors (biases, layer-norm gains),
    the usual convention. Default decay is 0, which reduces to Adam.
    """

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(named_params)
        for name, p in self.params:
            if not p.data.flags.c_contiguous:
                raise ValueError(f"parameter {name!r} must be C-contiguous for in-place updates")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros(p.data.size, dtype=p.data.dtype) for name, p in self.params}
        self._v = {name: np.zeros(p.data.size, dtype=p.data.dtype) for name, p in self.params}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            wd = 0.0 if p.data.ndim <= 1 else self.weight_decay
            kernels.adamw_step(
                p.data.reshape(-1),
                np.ascontiguousarray(p.grad.reshape(-1)),
                self._m[name],
                self._v[name],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                wd,
                bc1,
                bc2,
            )

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None
