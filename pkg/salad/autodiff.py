# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Reverse-mode automatic differentiation over dense numpy tensors.

Every differentiable operation builds a node that knows its parents and a
vector-Jacobian product (``vjp``): given the gradient of the final scalar
with respect to the node's output, it returns the gradient contributions
for each parent. ``Tensor.backward`` walks the graph in reverse
topological order and accumulates those contributions additively.

Only tensors that (transitively) depend on a leaf created with
``requires_grad=True`` record a graph; everything else is plain numpy.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import numpy as np

from .exceptions import AutodiffError, ShapeError

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Sequence

logger = logging.getLogger(__name__)


class Tensor:
    """A dense array plus the bookkeeping needed to backpropagate through it."""

    __array_ufunc__ = None  # ndarray <op> Tensor dispatches to the reflected Tensor method

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._prev = ()
        self._vjp = None
        self._op = ""

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, op={self._op or 'leaf'!r})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._vjp is None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self, grad=None):
        """Backpropagate from this tensor into every reachable leaf.

        Raises
        ------
        AutodiffError
            If this tensor does not belong to a recorded graph, or if it is
            not a scalar and no seed gradient was given.
        """
        if self.is_leaf and not self.requires_grad:
            raise AutodiffError(
                "backward() called on a tensor with no recorded graph; run the forward pass first"
            )
        if grad is None:
            if self.data.size != 1:
                raise AutodiffError(
                    f"backward() needs an explicit gradient for non-scalar output of shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != output shape {self.shape}")

        order = _topological_order(self)
        logger.debug("backward through %d nodes", len(order))
        _accumulate(self, grad)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            parent_grads = node._vjp(node.grad)
            for parent, parent_grad in zip(node._prev, parent_grads):
                if parent_grad is not None:
                    _accumulate(parent, parent_grad)

    # arithmetic

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value, dtype=None) -> Tensor:
    """Wrap ``value`` as a constant tensor unless it already is a Tensor."""
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=dtype)
    return Tensor(arr)


def custom_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op: str = "custom",
) -> Tensor:
    """Create a graph node with a hand-written vector-Jacobian product.

    ``vjp(grad_out)`` must return one gradient (or None) per parent, each
    broadcastable to that parent's shape.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray):
    if not tensor.requires_grad:
        return
    grad = _unbroadcast(np.asarray(grad), tensor.shape).astype(tensor.data.dtype, copy=False)
    if tensor.grad is None:
        tensor.grad = np.array(grad, copy=True)
    else:
        tensor.grad = tensor.grad + grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _topological_order(root: Tensor) -> list[Tensor]:
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._prev:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return custom_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return custom_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return custom_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return custom_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise AutodiffError("only constant exponents are supported")
    a = as_tensor(a)
    return custom_op(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
        "pow",
    )


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return custom_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return custom_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = stable_sigmoid(a.data)
    return custom_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return custom_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return custom_op(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return custom_op(out, (a,), vjp, "softmax")


def clip(a, low: float, high: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.data >= low) & (a.data <= high)
    return custom_op(np.clip(a.data, low, high), (a,), lambda g: (g * mask,), "clip")


def maximum(a, b) -> Tensor:
    a, b = _pair(a, b)
    pick_a = a.data >= b.data
    return custom_op(
        np.maximum(a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a), "maximum"
    )


def minimum(a, b) -> Tensor:
    a, b = _pair(a, b)
    pick_a = a.data <= b.data
    return custom_op(
        np.minimum(a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a), "minimum"
    )


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    return custom_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), "reshape")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return custom_op(a.data[index], (a,), vjp, "getitem")


def concat(tensors: Iterable[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0, *sizes])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return custom_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp, "concat")


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
