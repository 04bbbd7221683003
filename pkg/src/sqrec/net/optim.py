"""Adam optimizer over named parameter dictionaries."""

from __future__ import annotations

import numpy as np


class GradientError(ArithmeticError):
    """A gradient contained NaN or infinity; continuing would corrupt weights."""


class Adam:
    """Adam with bias-corrected first and second moments.

    Parameters are updated in place so layers keep their array identity.
    ``lr`` may be reassigned between steps (stepwise schedules); moment
    state persists across the change.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if not (0.0 < lr and 0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0 and eps > 0.0):
            raise ValueError(f"invalid hyperparameters lr={lr} beta1={beta1} "
                             f"beta2={beta2} eps={eps}")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        """One update over every named parameter; grads keys must match."""
        if set(params) != set(grads):
            missing = sorted(set(params) ^ set(grads))
            raise ValueError(f"parameter/gradient name mismatch: {missing}")
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient in {name!r} at step {self.t + 1}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name].astype(p.dtype, copy=False)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
