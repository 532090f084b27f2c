from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np

from ..errors import GraphError, NonFiniteError

BackwardFn = Callable[[np.ndarray], tuple["np.ndarray | None", ...]]

_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{where}: {bad} non-finite value(s) in output of shape {tuple(arr.shape)}")


@dataclass
class Node:
    """One recorded operation: its inputs and the closure that maps the output
    gradient to input gradients (the closure holds the saved activations)."""

    op: str
    inputs: tuple["Tensor", ...]
    backward: BackwardFn | None
    consumed: bool = False


class Tensor:
    """Dense float64 array with optional gradient tracking.

    Leaves are created by the user (parameters, inputs); every other tensor is
    produced by a primitive in `ops` and carries the `Node` that made it.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, order="C")
        check_finite(arr, f"Tensor({name or 'leaf'})")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool, node: Node | None) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.node = node
        t.name = None
        return t

    # ---- introspection ----
    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        if self.size != 1:
            raise GraphError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy(), False, None)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ---- operator sugar (primitives live in ops) ----
    def __add__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.mul(other, self)

    def __neg__(self) -> "Tensor":
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import ops

        return ops.matmul(self, other)

    def __truediv__(self, other: float) -> "Tensor":
        from . import ops

        if isinstance(other, Tensor):
            raise GraphError("division is only defined by a python scalar")
        return ops.scale(self, 1.0 / float(other))

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        from . import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def exp(self) -> "Tensor":
        from . import ops

        return ops.exp(self)

    def log(self) -> "Tensor":
        from . import ops

        return ops.log(self)


@dataclass
class Graph:
    """Operations reachable from one output, inputs before outputs."""

    order: list[Tensor] = field(default_factory=list)

    @staticmethod
    def trace(root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            node = t.node
            if node is None:
                continue
            if node.consumed:
                raise GraphError(
                    f"graph already consumed at op '{node.op}'; run the forward pass again before backward"
                )
            for inp in node.inputs:
                if inp.node is not None and inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
        return Graph(order=order)

    @property
    def nodes(self) -> list[Node]:
        return [t.node for t in self.order if t.node is not None]


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients are written (not accumulated) into `.grad` of every reachable
    tensor with requires_grad. Frozen leaves are never visited. The graph is
    consumed: saved activations are released and a second call raises.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward called on a tensor that does not require grad")
    if loss.node is None:
        loss.grad = np.ones_like(loss.data)
        return

    graph = Graph.trace(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}

    for t in reversed(graph.order):
        node = t.node
        assert node is not None
        g = pending.pop(id(t), None)
        if g is not None and node.backward is not None:
            t.grad = g
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.data.shape:
                    raise GraphError(
                        f"op '{node.op}' produced gradient of shape {ig.shape} for input of shape {inp.shape}"
                    )
                if inp.node is None:
                    prev = leaves.get(id(inp))
                    leaves[id(inp)] = (inp, ig if prev is None else prev[1] + ig)
                else:
                    prev_g = pending.get(id(inp))
                    pending[id(inp)] = ig if prev_g is None else prev_g + ig
        node.consumed = True
        node.backward = None

    for leaf, g in leaves.values():
        check_finite(g, f"gradient of {leaf.name or 'leaf'}")
        leaf.grad = np.array(g, dtype=np.float64)
