"""Affine maps and small MLPs on top of :mod:`cocograph.tensor`."""

from __future__ import annotations

import numpy as np

from . import tensor as T


def init_affine(params: T.ParameterSet, name, fan_in, fan_out, rng):
    """Weights and bias drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    params.add(f"{name}.weight", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    params.add(f"{name}.bias", rng.uniform(-bound, bound, size=(fan_out,)))


def affine(params, name, x):
    return T.add(T.matmul(x, params[f"{name}.weight"]), params[f"{name}.bias"])


def init_mlp(params, name, widths, rng):
    for i in range(len(widths) - 1):
        init_affine(params, f"{name}.{i}", widths[i], widths[i + 1], rng)


def mlp(params, name, x, depth):
    """``depth`` affine maps with ReLU in between (none after the last)."""
    for i in range(depth):
        x = affine(params, f"{name}.{i}", x)
        if i < depth - 1:
            x = T.relu(x)
    return x
