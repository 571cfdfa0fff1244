"""Dense tensors, reverse-mode differentiation and Adam."""

from .ops import ShapeError, UnknownOpError, apply, kinds
from .optim import AdamState, adam_step
from .tensor import DTYPES, Graph, GraphError, Tensor, active_graph, backward, no_grad

__all__ = [
    "AdamState",
    "DTYPES",
    "Graph",
    "GraphError",
    "ShapeError",
    "Tensor",
    "UnknownOpError",
    "active_graph",
    "adam_step",
    "apply",
    "backward",
    "kinds",
    "no_grad",
]
