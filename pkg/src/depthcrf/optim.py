"""Adam and the linear learning-rate schedule."""

from __future__ import annotations

import numpy as np


def linear_lr(step, total, start, end):
    """Linear interpolation from ``start`` at step 0 to ``end`` at step ``total - 1``."""
    if total <= 1:
        return start
    frac = min(max(step / (total - 1), 0.0), 1.0)
    return start + (end - start) * frac


class Adam:
    def __init__(self, named_params, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(named_params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return self.t, self.m, self.v

    def load_state(self, t, m, v):
        self.t = int(t)
        for k in self.params:
            self.m[k][...] = m[k]
            self.v[k][...] = v[k]
