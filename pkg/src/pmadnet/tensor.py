"""Reverse-mode automatic differentiation on dense numpy arrays.

A Tensor wraps an ndarray and, when gradients are enabled, remembers the
operation that produced it: its parent tensors and a closure that maps the
incoming output gradient to one gradient array per parent.  backward()
linearizes the graph into a Tape (exact reverse topological order) and visits
each node once, accumulating gradients with += so fan-out is handled by
construction.

All numerics are deterministic: same inputs, same seed, same operation order,
bit-identical floats on every run.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .errors import DetachedTensor, NotScalarLoss, ShapeMismatch

_grad_enabled = True


def grad_enabled() -> bool:
    """True when new operations should be recorded for backprop."""
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the with-block."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff.

    data          : float ndarray (any shape, including 0-d scalars)
    requires_grad : whether backward() should produce .grad for this tensor
    grad          : ndarray of the same shape, populated by backward()
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "backprop", "op_name")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents: tuple[Tensor, ...] = ()
        self.backprop = None
        self.op_name = "leaf"

    # -- construction ------------------------------------------------------

    @staticmethod
    def result(data, parents, backprop, op_name: str) -> "Tensor":
        """Build an op output, recording the graph edge only when needed.

        backprop(grad_out) must return one ndarray (or None) per parent, in
        order.  It is stored only if grads are enabled and some parent
        requires them, so inference builds no graph at all.
        """
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = tuple(parents)
            out.backprop = backprop
            out.op_name = op_name
        return out

    def detach(self) -> "Tensor":
        """A view of the same data with no graph history."""
        return Tensor(self.data)

    # -- inspection --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.data.shape)}, dtype={self.data.dtype}, op={self.op_name}{flag})"

    # -- gradient plumbing ---------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate .grad on every reachable tensor with requires_grad.

        The receiver must be a scalar (size 1) produced by recorded
        operations; gradients accumulate with += across fan-out.
        """
        if self.data.size != 1:
            raise NotScalarLoss(f"backward() needs a scalar loss, got shape {self.data.shape}")
        if not self.requires_grad:
            raise DetachedTensor("loss does not participate in any recorded computation")
        tape = Tape.trace(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(tape.nodes):
            if node.backprop is None:
                continue
            grads = node.backprop(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise ShapeMismatch(
                        f"op {node.op_name!r} produced gradient shape {g.shape} "
                        f"for parent shape {parent.data.shape}"
                    )
                # Accumulation allocates a fresh array, so sharing g's buffer
                # with node.grad (identity pass-through ops) is safe.
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- arithmetic sugar (strict shapes; scalars are 0-d tensors) ---------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        from . import ops
        return ops.add(self, self._coerce(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, self._coerce(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, self._coerce(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(self._coerce(other), self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, self._coerce(other))

    def reshape(self, *shape) -> "Tensor":
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def tensor_from(data, shape=None, requires_grad: bool = False, dtype=None) -> Tensor:
    """Validating constructor: optional shape check and explicit dtype."""
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype)
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise ShapeMismatch(f"expected shape {tuple(shape)}, got {tuple(arr.shape)}")
    return Tensor(arr, requires_grad=requires_grad)


@dataclass
class TapeEntry:
    """One recorded operation: the output tensor and its parent edge."""

    tensor: Tensor
    op_name: str
    parents: tuple
    backprop: object

    @property
    def grad(self):
        return self.tensor.grad


class Tape:
    """Reverse topological linearization of the graph below a root tensor.

    Invariants (enforced by construction, asserted in tests):
      * every tensor appears exactly once;
      * every entry appears after all entries that consume its output,
        when the list is walked in reverse;
      * leaves carry no backprop closure.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        visited: set[int] = set()
        # Iterative DFS; recursion would overflow on deep (per-pixel) graphs.
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def entries(self) -> list[TapeEntry]:
        return [TapeEntry(t, t.op_name, t.parents, t.backprop) for t in self.nodes]

    def __len__(self):
        return len(self.nodes)
