"""Dense float64 tensors with reverse-mode differentiation, parameters and Adam.

Only the operations needed by the encoders and losses are provided. Shapes are
explicit: the only broadcast allowed is a row vector added across the rows of a
matrix (:func:`add`) and a column vector scaling rows (:func:`row_scale`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, OptimError, ShapeError

NORM_EPS = 1e-12
CHECKPOINT_VERSION = 1


class Tensor:
    """A value in a computation graph.

    ``_parents`` and ``_grad_fn`` are set by forward ops when any input
    requires a gradient; ``_grad_fn(g)`` maps the output gradient to one
    gradient (or ``None``) per parent.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise DomainError("tensor values must be finite")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._grad_fn = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return scale(self, 1.0 / c)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, float(x)))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, grad_fn):
    if not np.isfinite(data).all():
        raise DomainError("non-finite value produced by forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    return out


def _need_matrix(t, op):
    if t.ndim != 2:
        raise ShapeError(f"{op} expects a matrix, got shape {t.shape}")


# ------------------------------------------------------------------ forward ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need_matrix(a, "matmul")
    _need_matrix(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _make(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a row vector ``(d,)``/``(1, d)`` added to every row of ``a``."""
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if a.ndim == 2 and b.data.size == a.shape[1] and b.ndim in (1, 2) and b.shape[0] in (1, a.shape[1]):
        bshape = b.shape
        return _make(a.data + b.data.reshape(1, -1), (a, b),
                     lambda g: (g, g.sum(axis=0).reshape(bshape)))
    raise ShapeError(f"add {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub {a.shape} - {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul {a.shape} * {b.shape}")
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def row_scale(x: Tensor, s: Tensor) -> Tensor:
    """``x[i, :] * s[i]`` for a matrix ``x`` (n, d) and a column ``s`` (n, 1)."""
    _need_matrix(x, "row_scale")
    if s.shape != (x.shape[0], 1):
        raise ShapeError(f"row_scale {x.shape} by {s.shape}")
    X, S = x.data, s.data
    return _make(X * S, (x, s), lambda g: (g * S, (g * X).sum(axis=1, keepdims=True)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise DomainError("log of non-positive value")
    A = a.data
    return _make(np.log(A), (a,), lambda g: (g / A,))


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001
    shape = a.shape
    if axis is None:
        return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))
    _need_matrix(a, "sum(axis)")
    if axis == 0:
        return _make(a.data.sum(axis=0), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    if axis == 1:
        return _make(a.data.sum(axis=1), (a,), lambda g: (np.broadcast_to(g[:, None], shape).copy(),))
    raise ShapeError(f"bad axis {axis}")


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.data.size)


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    for t in tensors:
        _need_matrix(t, "concat")
    other = 1 - axis
    if len({t.shape[other] for t in tensors}) != 1:
        raise ShapeError(f"concat shapes {[t.shape for t in tensors]}")
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def row_l2_normalize(a: Tensor) -> Tensor:
    _need_matrix(a, "row_l2_normalize")
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if (norms < NORM_EPS).any():
        raise DomainError("cannot normalize a zero-norm row")
    y = a.data / norms

    def grad_fn(g):
        return ((g - y * (y * g).sum(axis=1, keepdims=True)) / norms,)

    return _make(y, (a,), grad_fn)


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax of a matrix."""
    _need_matrix(a, "log_softmax")
    m = a.data.max(axis=1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _make(y, (a,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def logsumexp(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a matrix, shape (n,)."""
    _need_matrix(a, "logsumexp")
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    return _make((np.log(s) + m)[:, 0], (a,), lambda g: (p * g[:, None],))


def gather_rows(a: Tensor, index) -> Tensor:
    _need_matrix(a, "gather_rows")
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ShapeError("gather index out of range")
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), grad_fn)


def scatter_add_rows(a: Tensor, index, num_rows: int) -> Tensor:
    """``out[index[i]] += a[i]`` into a zero matrix of ``num_rows`` rows."""
    _need_matrix(a, "scatter_add_rows")
    index = np.asarray(index, dtype=np.int64)
    if index.shape != (a.shape[0],):
        raise ShapeError("scatter index length must equal row count")
    if index.size and (index.min() < 0 or index.max() >= num_rows):
        raise ShapeError("scatter index out of range")
    out = np.zeros((num_rows, a.shape[1]))
    np.add.at(out, index, a.data)
    return _make(out, (a,), lambda g: (g[index],))


# -------------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# ------------------------------------------------------------------ parameters

class ParameterSet(dict):
    """Ordered mapping of unique names to trainable tensors."""

    def add(self, name, data):
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self[name] = t
        return t

    def update_from(self, other, prefix=""):
        for name, t in other.items():
            if prefix + name in self:
                raise KeyError(f"duplicate parameter {prefix + name!r}")
            self[prefix + name] = t
        return self

    def zero_grad(self):
        for t in self.values():
            t.zero_grad()

    def clear_grad(self):
        for t in self.values():
            t.grad = None

    def state(self):
        return {name: t.data.copy() for name, t in self.items()}


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParameterSet, state: AdamState) -> None:
    """One bias-corrected Adam update of every parameter; gradients are cleared afterwards."""
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise OptimError(f"missing gradient for {missing[:3]}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    params.clear_grad()


# ------------------------------------------------------------------ checkpoints

def params_to_json(params: ParameterSet) -> dict:
    return {name: {"shape": list(t.shape), "values": [float(x) for x in t.data.ravel()]}
            for name, t in params.items()}


def params_from_json(obj: dict) -> dict:
    """Name -> float64 array; ``repr``-formatted floats round-trip bit for bit."""
    out = {}
    for name, entry in obj.items():
        arr = np.array(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"{name}: {arr.size} values for shape {shape}")
        out[name] = arr.reshape(shape)
    return out


def save_params(params: ParameterSet, path) -> None:
    doc = {"version": CHECKPOINT_VERSION, "params": params_to_json(params)}
    Path(path).write_text(json.dumps(doc))


def load_params(path) -> dict:
    doc = json.loads(Path(path).read_text())
    return params_from_json(doc["params"])


def transpose(a: Tensor) -> Tensor:
    _need_matrix(a, "transpose")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))
