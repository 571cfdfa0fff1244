"""Immutable tensors and the recording tape used for reverse-mode differentiation."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}

_counter = itertools.count()
_local = threading.local()


class GraphError(RuntimeError):
    pass


class Tensor:
    """A read-only numpy array plus bookkeeping for the active graph.

    ``requires_grad`` marks a trainable leaf. ``name`` is the key under which
    its gradient is reported by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "name", "_tracked", "__weakref__")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None, dtype: Any = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if dtype is None else dtype)
        if arr.flags.writeable:
            arr = arr.view()
            arr.flags.writeable = False
        if any(s < 1 for s in arr.shape):
            raise ValueError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        if requires_grad and name is None:
            name = f"param{next(_counter)}"
        self.name = name
        # True when the tensor is a trainable leaf or the output of a recorded node.
        self._tracked = self.requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # Arithmetic sugar; each forwards to ops.apply.
    def __add__(self, other):
        from .ops import apply
        return apply("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import apply
        return apply("sub", self, other)

    def __rsub__(self, other):
        from .ops import apply
        return apply("sub", other, self)

    def __mul__(self, other):
        from .ops import apply
        return apply("mul", self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from .ops import apply
        return apply("matmul", self, other)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Graph:
    """Insertion-ordered tape of operation records.

    Use as a context manager; ops applied inside it are recorded when any
    input is tracked.
    """

    nodes: list[Node] = field(default_factory=list)
    _outputs: dict[int, int] = field(default_factory=dict)

    def record(self, node: Node) -> None:
        self._outputs[id(node.output)] = len(self.nodes)
        self.nodes.append(node)

    def __contains__(self, t: Tensor) -> bool:
        idx = self._outputs.get(id(t))
        return idx is not None and self.nodes[idx].output is t

    @property
    def parameters(self) -> set[str]:
        names = set()
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad:
                    names.add(t.name)
        return names

    def __enter__(self) -> "Graph":
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


def _stack() -> list[Graph | None]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_graph() -> Graph | None:
    stack = _stack()
    return stack[-1] if stack else None


class no_grad:
    """Context manager that suspends recording."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar ``loss`` for every trainable leaf.

    Frozen leaves (``requires_grad=False``) never appear in the result.
    """
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    if loss not in graph:
        raise GraphError("loss is not an output recorded in this graph")

    end = graph._outputs[id(loss)]
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[str, np.ndarray] = {}
    for node in reversed(graph.nodes[: end + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t._tracked:
                continue
            if t.requires_grad:
                prev = leaves.get(t.name)
                leaves[t.name] = gi if prev is None else prev + gi
            else:
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
    return leaves
