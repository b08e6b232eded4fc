"""Minimal reverse-mode differentiable array.

Double-precision, row-major, dense. Each non-leaf Tensor records its parents
and a closure that routes the incoming gradient to them; ``backward`` walks
the graph in reverse topological order. Broadcasting is restricted to
bias-add over the last axis and multiplication by a python scalar -- anything
richer would make the substrate harder to audit.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure numpy fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Convenience arithmetic; the real op set lives in ops.py.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor],
              backward: Callable[[np.ndarray], None]) -> Tensor:
    """Build an op result, attaching graph metadata only when needed."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(_needs_grad(p) for p in parents)
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


class Parameter:
    """A named, trainable leaf tensor.

    ``name`` is a dotted path assigned by the owning model; uniqueness is
    enforced at registry-walk time.
    """

    def __init__(self, data, name: str = "", trainable: bool = True):
        self.tensor = Tensor(data, requires_grad=trainable)
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.data.shape

    @property
    def trainable(self) -> bool:
        return self.tensor.requires_grad

    def zero_grad(self):
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def topo_order(root: Tensor) -> list:
    """Reverse-usable topological order of the graph below ``root``."""
    order: list = []
    seen: set = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, parameters: Optional[Iterable[Parameter]] = None):
    """Reverse-mode sweep from a scalar loss.

    Populates ``.grad`` on every reachable tensor that requires it; repeated
    calls accumulate. When ``parameters`` is given, returns a name -> gradient
    array map with zeros for parameters the loss does not reach.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    order = topo_order(loss)
    # Seed, then push gradients parent-ward in reverse topological order.
    grads: dict = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.accumulate_grad(g)
        if node._backward is not None:
            for parent, pg in node._backward(g):
                if not _needs_grad(parent):
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = np.asarray(pg, dtype=np.float64)
    if parameters is None:
        return None
    out = {}
    for p in parameters:
        g = p.tensor.grad
        out[p.name] = np.zeros(p.shape) if g is None else np.array(g)
    return out


def zero_grads(parameters: Iterable[Parameter]):
    for p in parameters:
        p.zero_grad()
