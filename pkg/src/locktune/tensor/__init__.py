from .core import Graph, Node, Tensor, backward, grad_enabled, no_grad
from .gradcheck import GradCheckReport, grad_check
from . import ops

__all__ = [
    "Graph",
    "Node",
    "Tensor",
    "backward",
    "grad_enabled",
    "no_grad",
    "GradCheckReport",
    "grad_check",
    "ops",
]
