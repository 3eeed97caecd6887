"""Tensor values and the reverse-mode graph walker."""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

MAX_RANK = 4

# When False, operations do not record backward closures; used for inference.
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
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
    """Dense real-valued array of rank <= 4 with optional gradient tracking.

    ``data`` is a float32 or float64 ndarray stored row-major. A tensor
    created by an operation keeps references to its parents and a backward
    closure; :func:`backward` replays those closures in reverse topological
    order, accumulating into ``grad`` wherever ``requires_grad`` is set.
    Values are immutable by convention once the tensor participates in a
    graph; only ``grad`` buffers mutate.
    """

    __slots__ = ("data", "requires_grad", "grad", "tag", "parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        tag: str = "leaf",
        parents: Sequence["Tensor"] = (),
        backward_fn: Optional[Callable[[np.ndarray], None]] = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_RANK:
            raise ValueError(f"tensor rank {arr.ndim} exceeds supported maximum {MAX_RANK}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tag = tag
        self.parents = tuple(parents)
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        # Non-inplace so read-only broadcast views are safe as first grads.
        self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, tag={self.tag!r})"

    # Operator sugar; heavy lifting lives in ops.py (imported lazily to
    # avoid the circular module dependency).
    def __add__(self, other):
        from . import ops

        return ops.add(self, _wrap(other, self.dtype))

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _wrap(other, self.dtype))

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        from . import ops

        return ops.mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


class Graph:
    """Operation records reachable from a root, in topological order.

    ``nodes`` lists every tensor reachable through parent links, with
    parents strictly before consumers. The backward pass walks the list
    once in reverse.
    """

    def __init__(self, root: Tensor, nodes: list[Tensor]):
        self.root = root
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        """Iterative post-order DFS; safe for graphs deeper than the recursion limit."""
        nodes: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(root, nodes)

    def backward(self) -> None:
        """Seed d(root)/d(root) = 1 and replay closures in reverse order."""
        root = self.root
        if root.data.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {root.shape}")
        root.accumulate_grad(np.ones_like(root.data))
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(root: Tensor) -> Graph:
    """Run reverse-mode differentiation from a scalar root.

    Gradients accumulate into every reachable tensor with
    ``requires_grad``; tensors outside the root's subgraph are untouched.
    Returns the traced graph (useful for inspection in tests).
    """
    graph = Graph.trace(root)
    graph.backward()
    return graph
