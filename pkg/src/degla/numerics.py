"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Only the operations the encoders and losses need are provided. Every op
records its parents and a closure that maps the output gradient onto the
parents; ``Tensor.backward`` walks the record in reverse topological order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateNorm, InvalidTemperature, NonFiniteFunction, ShapeMismatch

NORM_EPS = 1e-12
GRADCHECK_FLOOR = 1e-8

_node_ids = itertools.count()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that numpy broadcasting introduced
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node in the computation record.

    ``value`` is always a float64 array. ``grad`` is ``None`` until a backward
    pass reaches the node, then an array of the same shape.
    """

    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, parents: Sequence[Tensor] = (),
                 backward_fn: Callable[[np.ndarray], None] | None = None, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self._backward_fn = backward_fn
        self.name = name
        self.node_id = next(_node_ids)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> Tensor:
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph plumbing ---------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        if grad is None:
            if self.value.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.value)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))
        # gradients of intermediate nodes are rebuilt on every call
        for node in order:
            if node.parents:
                node.grad = None
        self._accumulate(np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None)


def _send(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t._accumulate(g)


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g)
        _send(b, g)

    return _make(a.value + b.value, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g)
        _send(b, -g)

    return _make(a.value - b.value, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g * b.value)
        _send(b, g * a.value)

    return _make(a.value * b.value, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g / b.value)
        _send(b, -g * a.value / (b.value ** 2))

    return _make(a.value / b.value, (a, b), bw)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.value)

    def bw(g):
        _send(x, g * out)

    return _make(out, (x,), bw)


def log(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _send(x, g / x.value)

    return _make(np.log(x.value), (x,), bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0

    def bw(g):
        _send(x, g * mask)

    return _make(np.where(mask, x.value, 0.0), (x,), bw)


def clamp_min(x, floor: float) -> Tensor:
    """max(x, floor); gradient is zero wherever the floor is active."""
    x = as_tensor(x)
    mask = x.value >= floor

    def bw(g):
        _send(x, g * mask)

    return _make(np.where(mask, x.value, floor), (x,), bw)


# -- reductions / shape ------------------------------------------------------

def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(x, np.broadcast_to(g, x.shape))

    return _make(out, (x,), bw)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def logsumexp(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.value.max(axis=axis, keepdims=True)
    shifted = np.exp(x.value - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = shifted / s

    def bw(g):
        _send(x, np.expand_dims(g, axis) * soft)

    return _make(out, (x,), bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _send(x, g.reshape(x.shape))

    return _make(x.value.reshape(shape), (x,), bw)


def transpose(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _send(x, g.T)

    return _make(x.value.T, (x,), bw)


def take(x, index) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.value)
        np.add.at(full, index, g)
        _send(x, full)

    return _make(x.value[index], (x,), bw)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _send(p, g[tuple(sl)])

    return _make(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        _send(a, g @ b.value.T)
        _send(b, a.value.T @ g)

    return _make(a.value @ b.value, (a, b), bw)


def embedding_bag(table, bags: Sequence[Sequence[int]]) -> Tensor:
    """Mean of ``table`` rows for each bag of ids; returns len(bags) x d."""
    table = as_tensor(table)
    out = np.empty((len(bags), table.shape[1]))
    for r, ids in enumerate(bags):
        out[r] = table.value[list(ids)].mean(axis=0)

    def bw(g):
        full = np.zeros_like(table.value)
        for r, ids in enumerate(bags):
            np.add.at(full, list(ids), g[r] / len(ids))
        _send(table, full)

    return _make(out, (table,), bw)


# -- geometry -----------------------------------------------------------------

def l2_normalize(x, eps: float = NORM_EPS) -> Tensor:
    """Scale the last axis to unit Euclidean norm.

    Raises DegenerateNorm if any vector has norm <= eps.
    """
    x = as_tensor(x)
    norm = np.sqrt((x.value ** 2).sum(axis=-1, keepdims=True))
    if np.any(norm <= eps):
        raise DegenerateNorm(f"vector norm {float(norm.min()):.3g} <= {eps:g}")
    y = x.value / norm

    def bw(g):
        # d(x/|x|) = (g - y <y, g>) / |x|
        _send(x, (g - y * (y * g).sum(axis=-1, keepdims=True)) / norm)

    return _make(y, (x,), bw)


def similarity_logits(a, b, tau) -> Tensor:
    """(i, j) -> a_i . b_j / tau for row-stacked unit vectors."""
    a, b, tau = as_tensor(a), as_tensor(b), as_tensor(tau)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"embedding dims differ: {a.shape} vs {b.shape}")
    if tau.value.size != 1 or not float(tau.value) > 0:
        raise InvalidTemperature(f"temperature must be a positive scalar, got {tau.value}")
    return matmul(a, transpose(b)) / tau.reshape(())


# -- gradient checking ----------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    worst_coordinate: tuple
    analytic_value: float
    numeric_value: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_relative_error < tol


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-4) -> GradCheckReport:
    """Compare the reverse-mode gradient of scalar ``f`` at ``x`` with central differences.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    base = np.array(x.value if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = float(f(Tensor(base.copy())).value)
        flat[i] = saved - h
        down = float(f(Tensor(base.copy())).value)
        flat[i] = saved
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteFunction(f"f is not finite near coordinate {np.unravel_index(i, base.shape)}")
        numeric.reshape(-1)[i] = (up - down) / (2 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRADCHECK_FLOOR)
    rel = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), base.shape) if rel.size else ()
    return GradCheckReport(
        max_relative_error=float(rel.max()) if rel.size else 0.0,
        worst_coordinate=tuple(int(i) for i in worst),
        analytic_value=float(analytic[worst]) if rel.size else 0.0,
        numeric_value=float(numeric[worst]) if rel.size else 0.0,
    )
