"""Reverse-mode autodiff over numpy arrays.

Values are float64 throughout; 32-bit conversion happens only at the
serialization boundary (see models.archive). A Tensor is a node in a
dynamically built graph: every op records a backward closure on its output,
and ``backward()`` replays them in reverse topological order. Graph edges are
only kept when some input requires a gradient, so forward passes through
frozen models carry no autodiff overhead.
"""

import numpy as np

from ..errors import ShapeError


class Tensor:
    """Array node of the computation graph.

    data : float64 ndarray, row-major
    grad : ndarray of the same shape, or None until backward touches it
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = _parents

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        """Accumulate gradients of this scalar into every reachable input."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for loss arithmetic; heavy ops live in engine.ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _lift(other))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, other)
        return ops.mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def accumulate_grad(tensor, grad, fresh=False):
    """Add a backward contribution into tensor.grad (allocating on first use).

    fresh=True promises the caller hands over exclusive ownership of a newly
    allocated array, letting the first accumulation skip its defensive copy.
    """
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        if fresh:
            tensor.grad = grad
        else:
            tensor.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        tensor.grad += grad


def make_node(data, parents, backward=None):
    """Build an op output, keeping graph edges only when a grad is needed."""
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    out = Tensor(data, requires_grad=True, _parents=tuple(parents))
    out._backward = backward
    return out


class Parameter:
    """Named trainable tensor with AdamW moment buffers.

    Names are dot-separated paths, unique within a model. Moment buffers are
    zero-initialized and live with the parameter so optimizer state survives
    checkpointing alongside the weights.
    """

    __slots__ = ("name", "tensor", "m", "v")

    def __init__(self, name, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"
