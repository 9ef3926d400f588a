"""Finite-difference utilities shared by the gradient tests."""

import numpy as np


def rel_error(analytic, numeric):
    # the 1e-6 floor stops exactly-zero gradients (e.g. translation-invariant
    # biases) from turning difference noise into a large ratio
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-6))


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g
