"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

import numpy as np

from . import tensor as T


def numeric_grad(fn, arrays, h=1e-6):
    """d fn / d arrays[k] by central differences; ``fn`` maps float arrays to a float."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for i in np.ndindex(a.shape):
            old = a[i]
            a[i] = old + h
            hi = fn(*arrays)
            a[i] = old - h
            lo = fn(*arrays)
            a[i] = old
            g[i] = (hi - lo) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(build, arrays):
    leaves = [T.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    T.backward(out)
    return [np.zeros_like(a) if t.grad is None else t.grad for t, a in zip(leaves, arrays)]


def relative_error(a, b, floor=1e-8):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def check(build, arrays, h=1e-6, perturb=0.0):
    """Largest relative error between analytic and numeric gradients over all inputs.

    ``build`` takes tensors and returns a scalar tensor. ``perturb`` is added to
    the analytic gradients (used to prove that a broken gradient is caught).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ana = analytic_grad(build, arrays)

    def value(*arrs):
        return float(build(*[T.Tensor(x) for x in arrs]).data)

    num = numeric_grad(value, arrays, h)
    return max(relative_error(a + perturb, n) for a, n in zip(ana, num))
