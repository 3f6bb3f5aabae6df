"""Reverse-mode automatic differentiation over numpy arrays.

Every operation on a :class:`Tensor` records its parents and a closure that
pushes the output gradient back to them. ``Tensor.backward`` walks the graph
in reverse topological order. Gradients accumulate, so a tensor used twice
receives the sum of both contributions.
"""

from __future__ import annotations

import itertools

import numpy as np

LOG_FLOOR = 1e-12

_ids = itertools.count()


class ContractError(ValueError):
    """A caller violated an operation precondition."""


class DimensionError(ContractError):
    """Array shapes do not line up."""


def _unbroadcast(grad, shape):
    # sum out the axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(value) -> "Tensor":
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """An n-dimensional float64 array that participates in a differentiation graph."""

    __array_priority__ = 100  # make ndarray + Tensor dispatch to Tensor.__radd__

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.node_id = next(_ids)
        self._parents = _parents
        self._op = _op
        self._backward = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def _make(self, data, parents, op, backward):
        out = Tensor(data, _parents=parents, _op=op)
        if out.requires_grad:
            out._backward = backward
        return out

    # -- graph traversal ---------------------------------------------------

    def backward(self):
        """Populate ``.grad`` on every tensor that requires it and feeds this scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return self._make(self.data + other.data, (self, other), "add", backward)

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.data, (self,), "neg", lambda g: self._accumulate(-g))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        return self._make(self.data * other.data, (self, other), "mul", backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def backward(g):
            self._accumulate(_unbroadcast(g / other.data, self.shape))
            other._accumulate(_unbroadcast(-g * out_data / other.data, other.shape))

        return self._make(out_data, (self, other), "div", backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ContractError("only constant real exponents are supported")
        base = self.data

        def backward(g):
            self._accumulate(g * exponent * base ** (exponent - 1))

        return self._make(base**exponent, (self,), "pow", backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")

        def backward(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)

        return self._make(self.data @ other.data, (self, other), "matmul", backward)

    # -- reductions and reshaping -----------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, shape))

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def __getitem__(self, index):
        shape = self.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            self._accumulate(full)

        return self._make(self.data[index], (self,), "index", backward)

    def reshape(self, *shape):
        old = self.shape
        return self._make(
            self.data.reshape(*shape), (self,), "reshape", lambda g: self._accumulate(g.reshape(old))
        )

    # -- nonlinearities ----------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        return self._make(out_data, (self,), "exp", lambda g: self._accumulate(g * out_data))

    def log(self):
        """Natural log with the argument clamped at ``LOG_FLOOR``."""
        clamped = np.maximum(self.data, LOG_FLOOR)
        live = self.data > LOG_FLOOR

        def backward(g):
            self._accumulate(np.where(live, g / clamped, 0.0))

        return self._make(np.log(clamped), (self,), "log", backward)

    def relu(self):
        mask = self.data > 0

        return self._make(self.data * mask, (self,), "relu", lambda g: self._accumulate(g * mask))

    def sigmoid(self):
        out_data = sigmoid(self.data)
        return self._make(
            out_data, (self,), "sigmoid", lambda g: self._accumulate(g * out_data * (1.0 - out_data))
        )

    def softmax(self):
        out_data = softmax(self.data)

        def backward(g):
            dot = (g * out_data).sum(axis=-1, keepdims=True)
            self._accumulate(out_data * (g - dot))

        return self._make(out_data, (self,), "softmax", backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return tensors[0]._make(data, tuple(tensors), "concat", backward)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = np.exp(x - x.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)
