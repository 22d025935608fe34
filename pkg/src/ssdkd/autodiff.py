"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Graph` is an append-only tape. Leaves created with
:meth:`Graph.param` and every primitive whose inputs touch the graph are
recorded as nodes, so the append order is already a topological order.
Tensors that never touch a graph are constants: they carry values, a zero
gradient that is never written, and ``node_id is None``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    def __init__(self, primitive: str, *shapes):
        self.primitive = primitive
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(list(s)) for s in self.shapes)
        super().__init__(f"{primitive}: incompatible shapes {joined}")


class DomainError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("values", "_grad", "graph", "node_id")

    def __init__(self, values, graph: "Graph | None" = None, node_id: int | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self._grad = None  # allocated on first accumulation
        self.graph = graph
        self.node_id = node_id

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = np.array(value, dtype=np.float64)

    def _accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64)
        else:
            self._grad += g

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def is_constant(self) -> bool:
        return self.node_id is None

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else _not_scalar(self)

    def __repr__(self):
        kind = "const" if self.node_id is None else f"node={self.node_id}"
        return f"Tensor(shape={list(self.shape)}, {kind})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return pow(self, p)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return index(self, key)


def _not_scalar(t: Tensor):
    raise UsageError(f"expected a scalar tensor, got shape {list(t.shape)}")


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    # maps the output gradient to one gradient per input (None = no contribution)
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(t.node_id for t in self.inputs if t.node_id is not None)


class Graph:
    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def param(self, values) -> Tensor:
        """Register a differentiable leaf holding a copy of ``values``."""
        out = Tensor(np.array(values, dtype=np.float64), self, len(self.nodes))
        self.nodes.append(Node("leaf", (), out, None))
        return out

    def record(self, kind, inputs, values, vjp) -> Tensor:
        out = Tensor(values, self, len(self.nodes))
        self.nodes.append(Node(kind, tuple(inputs), out, vjp))
        return out

    def backward(self, root: Tensor) -> None:
        if root.values.size != 1 or root.ndim > 1:
            raise UsageError(f"backward needs a scalar root, got shape {list(root.shape)}")
        if root.graph is not self:
            raise UsageError("root does not belong to this graph")
        root._accumulate(np.ones_like(root.values))
        for node in reversed(self.nodes[: root.node_id + 1]):
            g_out = node.output._grad
            if node.vjp is None or g_out is None:
                continue
            for inp, g in zip(node.inputs, node.vjp(g_out)):
                if g is not None and inp.node_id is not None:
                    inp._accumulate(g)


def backward(root: Tensor) -> None:
    if root.graph is None:
        if root.values.size != 1 or root.ndim > 1:
            raise UsageError(f"backward needs a scalar root, got shape {list(root.shape)}")
        return  # constant root: nothing depends on anything
    root.graph.backward(root)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _graph_of(*tensors: Tensor) -> Graph | None:
    graph = None
    for t in tensors:
        if t.graph is None:
            continue
        if graph is None:
            graph = t.graph
        elif t.graph is not graph:
            raise UsageError("tensors from different graphs cannot be combined")
    return graph


def _emit(kind, inputs, values, vjp) -> Tensor:
    graph = _graph_of(*inputs)
    if graph is None:
        return Tensor(values)
    return graph.record(kind, inputs, values, vjp)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(name, a: Tensor, b: Tensor):
    if a.values.shape == b.values.shape:
        return a.values.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(name, a.shape, b.shape) from None


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _emit("add", (a, b), a.values + b.values,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _emit("sub", (a, b), a.values - b.values,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _emit("mul", (a, b), a.values * b.values,
                 lambda g: (_unbroadcast(g * b.values, a.shape),
                            _unbroadcast(g * a.values, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.values == 0):
        raise DomainError("div: division by zero")
    out = a.values / b.values
    return _emit("div", (a, b), out,
                 lambda g: (_unbroadcast(g / b.values, a.shape),
                            _unbroadcast(-g * out / b.values, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _emit("matmul", (a, b), a.values @ b.values,
                 lambda g: (g @ b.values.T, a.values.T @ g))


# -- elementwise unary -------------------------------------------------------

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", (a,), -a.values, lambda g: (-g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    return _emit("relu", (a,), np.where(mask, a.values, 0.0), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0):
        raise DomainError("log: non-positive input")
    return _emit("log", (a,), np.log(a.values), lambda g: (g / a.values,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0):
        raise DomainError("sqrt: non-positive input")
    out = np.sqrt(a.values)
    return _emit("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _emit("square", (a,), a.values * a.values, lambda g: (2.0 * g * a.values,))


def pow(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    if p != int(p) and np.any(a.values < 0):
        raise DomainError("pow: fractional power of negative input")
    return _emit("pow", (a,), a.values ** p, lambda g: (g * p * a.values ** (p - 1.0),))


# -- reductions --------------------------------------------------------------

def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _emit("sum", (a,), a.values.sum(axis=axis, keepdims=keepdims),
                 lambda g: (np.array(_expand(g, a.shape, axis, keepdims)),))


def mean_axis(a, axis: int = 0, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.shape[axis]
    if n == 0:
        raise ShapeError("mean_axis", a.shape)
    return _emit("mean_axis", (a,), a.values.mean(axis=axis, keepdims=keepdims),
                 lambda g: (np.array(_expand(g, a.shape, axis, keepdims)) / n,))


def var_axis(a, axis: int = 0, keepdims: bool = False) -> Tensor:
    """Biased (population) variance along ``axis``."""
    a = as_tensor(a)
    n = a.shape[axis]
    if n == 0:
        raise ShapeError("var_axis", a.shape)
    centered = a.values - a.values.mean(axis=axis, keepdims=True)
    out = (centered * centered).mean(axis=axis, keepdims=keepdims)
    return _emit("var_axis", (a,), out,
                 lambda g: (2.0 / n * centered * _expand(g, a.shape, axis, keepdims),))


def norm(a) -> Tensor:
    """Euclidean norm over all elements; subgradient 0 at the origin."""
    a = as_tensor(a)
    out = float(np.sqrt(np.sum(a.values * a.values)))

    def vjp(g):
        if out == 0.0:
            return (np.zeros_like(a.values),)
        return (g * a.values / out,)

    return _emit("norm", (a,), np.array(out), vjp)


def log_softmax_lastaxis(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ShapeError("log_softmax_lastaxis", a.shape)
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    soft = np.exp(out)
    return _emit("log_softmax", (a,), out,
                 lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def softmax_lastaxis(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ShapeError("softmax_lastaxis", a.shape)
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    out = np.exp(shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True)))
    return _emit("softmax", (a,), out,
                 lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


# -- structural --------------------------------------------------------------

def broadcast(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.values, shape).copy()
    except ValueError:
        raise ShapeError("broadcast", a.shape, shape) from None
    return _emit("broadcast", (a,), out, lambda g: (_unbroadcast(g, a.shape),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if math.prod(shape) != a.values.size:
        raise ShapeError("reshape", a.shape, shape)
    return _emit("reshape", (a,), a.values.reshape(shape), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat")
    rest = [t.shape[:axis] + t.shape[axis + 1:] for t in ts]
    if any(r != rest[0] for r in rest):
        raise ShapeError("concat", *(t.shape for t in ts))
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def vjp(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _emit("concat", ts, np.concatenate([t.values for t in ts], axis=axis), vjp)


def index(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.values[key]

    def vjp(g):
        full = np.zeros_like(a.values)
        np.add.at(full, key, g)
        return (full,)

    return _emit("index", (a,), np.array(out), vjp)


# -- verification ------------------------------------------------------------

def fd_check(f: Callable[[Tensor], Tensor], x0, h: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``f`` at ``x0`` with central differences.

    ``f`` maps a flat parameter tensor to a scalar tensor. Returns the max over
    coordinates of ``|analytic - fd| / max(1, |fd|)``; ``inf`` if ``f`` yields NaN.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x0 = np.array(x0, dtype=np.float64).reshape(-1)
    graph = Graph()
    x = graph.param(x0)
    out = f(x)
    if np.isnan(out.values).any():
        return math.inf
    backward(out)
    analytic = x.grad.copy()

    worst = 0.0
    for i in range(x0.size):
        step = np.zeros_like(x0)
        step[i] = h
        hi = f(Tensor(x0 + step)).item()
        lo = f(Tensor(x0 - step)).item()
        if math.isnan(hi) or math.isnan(lo) or np.isnan(analytic[i]):
            return math.inf
        fd = (hi - lo) / (2.0 * h)
        worst = max(worst, abs(analytic[i] - fd) / max(1.0, abs(fd)))
    return worst
