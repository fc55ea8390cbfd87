"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .core import Tensor, verification_mode


def grad_check(f, x, indices=None, rng=None):
    """Return the max relative error between analytic and central-difference gradients.

    ``f`` maps a :class:`Tensor` to a scalar tensor. The step for element ``i``
    is ``1e-5 * (1 + |x_i|)`` and the error is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.

    ``indices`` restricts the check to a subset of flat element positions;
    an integer draws that many positions with ``rng``.
    """
    with verification_mode():
        x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        xt = Tensor(x0, requires_grad=True)
        out = f(xt)
        if out.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
        out.backward()
        analytic = np.zeros_like(x0) if xt.grad is None else np.asarray(xt.grad, dtype=np.float64)

        flat = x0.ravel()
        if indices is None:
            idx = np.arange(flat.size)
        elif isinstance(indices, (int, np.integer)):
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = rng.choice(flat.size, size=min(int(indices), flat.size), replace=False)
        else:
            idx = np.asarray(indices)

        worst = 0.0
        for i in idx:
            h = 1e-5 * (1.0 + abs(flat[i]))
            xp = flat.copy()
            xp[i] += h
            xm = flat.copy()
            xm[i] -= h
            fp = f(Tensor(xp.reshape(x0.shape))).item()
            fm = f(Tensor(xm.reshape(x0.shape))).item()
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.ravel()[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
        return worst
