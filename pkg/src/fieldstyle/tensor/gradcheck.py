"""Central finite-difference checks for the autodiff engine."""
from __future__ import annotations

import numpy as np

from .core import default_dtype


def numeric_grad(fn, tensors, eps=1e-6, max_entries=None, rng=None):
    """Finite-difference gradients of scalar ``fn()`` w.r.t. each tensor.

    With ``max_entries`` only a random subset of entries is perturbed; the
    returned dict maps tensor index -> (flat indices, numeric values).
    """
    out = {}
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        vals = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn().data)
            flat[i] = orig - eps
            fm = float(fn().data)
            flat[i] = orig
            vals[k] = (fp - fm) / (2 * eps)
        out[ti] = (idx, vals)
    return out


def max_relative_error(analytic, numeric):
    """max |a - n| scaled by the larger of the two gradient magnitudes."""
    analytic = np.asarray(analytic, float).ravel()
    numeric = np.asarray(numeric, float).ravel()
    scale = max(np.abs(analytic).max(initial=0), np.abs(numeric).max(initial=0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0) / scale)


def check_gradients(fn, tensors, eps=1e-6, max_entries=None, rng=None):
    """Return the worst relative error over ``tensors`` (float64 recommended).

    ``fn`` must rebuild the graph from the current tensor values on each call.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    num = numeric_grad(fn, tensors, eps, max_entries, rng)
    worst = 0.0
    for ti, t in enumerate(tensors):
        idx, vals = num[ti]
        g = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1)
        worst = max(worst, max_relative_error(g[idx], vals))
    return worst


