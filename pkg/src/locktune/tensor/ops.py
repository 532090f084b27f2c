"""Differentiable primitives.

Broadcasting is deliberately narrow: two operands must have equal shapes, or
one of them is a scalar (a single element), or one of them matches the
trailing dimensions of the other (row broadcast, e.g. a bias of shape [D]
added to [B, T, D]).
"""
from __future__ import annotations

import math
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import erf

from ..errors import DegenerateInputError, ShapeError
from .core import BackwardFn, Node, Tensor, check_finite, grad_enabled

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(x: Any) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(out: np.ndarray, op: str, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    check_finite(out, op)
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    node = Node(op=op, inputs=tuple(inputs), backward=backward) if needs else None
    return Tensor._wrap(out, needs, node)


def custom_op(
    name: str,
    inputs: Sequence[Tensor],
    value: np.ndarray,
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]],
) -> Tensor:
    """Register a user-defined primitive: `value` is the forward result and
    `backward` maps the output gradient to one gradient per input."""
    return _make(np.asarray(value, dtype=np.float64), name, inputs, backward)


# ---------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------
def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...], op: str) -> tuple[int, ...]:
    if a == b:
        return a
    if math.prod(b) == 1 and len(b) <= len(a):
        return a
    if math.prod(a) == 1 and len(a) <= len(b):
        return b
    if len(b) < len(a) and a[len(a) - len(b):] == b:
        return a
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return b
    raise ShapeError(f"{op}: shapes {a} and {b} are not scalar- or row-broadcast compatible")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead >= 0 and g.shape[lead:] == shape:
        return g.sum(axis=tuple(range(lead))) if lead else g
    return np.asarray(g.sum()).reshape(shape)


# ---------------------------------------------------------
# elementwise
# ---------------------------------------------------------
def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def _bw(g: np.ndarray):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, "add", (a, b), _bw)


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape

    def _bw(g: np.ndarray):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, "sub", (a, b), _bw)


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def _bw(g: np.ndarray):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, "mul", (a, b), _bw)


def neg(x: Any) -> Tensor:
    x = as_tensor(x)
    return _make(-x.data, "neg", (x,), lambda g: (-g,))


def scale(x: Any, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _make(x.data * c, "scale", (x,), lambda g: (g * c,))


def exp(x: Any) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)

    return _make(y, "exp", (x,), lambda g: (g * y,))


def log(x: Any) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)

    return _make(y, "log", (x,), lambda g: (g / xd,))


def gelu(x: Any) -> Tensor:
    """Exact GELU, x * Phi(x) with the erf form of the normal CDF."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)

    return _make(xd * cdf, "gelu", (x,), lambda g: (g * (cdf + xd * pdf),))


def l2_normalize(x: Any, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    if np.any(norm == 0.0):
        rows = np.argwhere(norm.reshape(-1) == 0.0).reshape(-1)[:5].tolist()
        raise DegenerateInputError(f"l2_normalize: all-zero row(s) at flat index {rows}")
    y = x.data / norm

    def _bw(g: np.ndarray):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return ((g - y * dot) / norm,)

    return _make(y, "l2_normalize", (x,), _bw)


# ---------------------------------------------------------
# normalisations
# ---------------------------------------------------------
def softmax(x: Any, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax with max subtraction. `mask` (constant, broadcastable to x)
    marks entries that take part; masked entries get probability 0."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not keep.any(axis=axis).all():
            raise DegenerateInputError("softmax: a row is fully masked")
        z = np.where(keep, z, -np.inf)
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def _bw(g: np.ndarray):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, "softmax", (x,), _bw)


def log_softmax(x: Any, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def _bw(g: np.ndarray):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _make(y, "log_softmax", (x,), _bw)


def layer_norm(x: Any, gamma: Any, beta: Any, eps: float = 1e-6) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({d},)")
    if eps <= 0:
        raise ShapeError(f"layer_norm: eps must be > 0, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def _bw(g: np.ndarray):
        dgamma = np.sum(g * xhat, axis=lead)
        dbeta = np.sum(g, axis=lead)
        dxhat = g * gd
        dx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _make(xhat * gd + beta.data, "layer_norm", (x, gamma, beta), _bw)


# ---------------------------------------------------------
# linear algebra
# ---------------------------------------------------------
def matmul(a: Any, b: Any) -> Tensor:
    """a[..., m, k] x b[k, n] or a[..., m, k] x b[..., k, n] (same leading dims)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, a{a.shape} vs b{b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading dimensions differ, a{a.shape} vs b{b.shape}")
    ad, bd = a.data, b.data
    k, n = bd.shape[-2], bd.shape[-1]

    def _bw(g: np.ndarray):
        da = np.matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2:
            db = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            db = np.matmul(np.swapaxes(ad, -1, -2), g)
        return da, db

    return _make(np.matmul(ad, bd), "matmul", (a, b), _bw)


# ---------------------------------------------------------
# structural
# ---------------------------------------------------------
def reshape(x: Any, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        y = np.array(x.data.reshape(tuple(shape)))
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from e
    return _make(y, "reshape", (x,), lambda g: (g.reshape(src),))


def transpose(x: Any, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    if sorted(perm) != list(range(x.ndim)):
        raise ShapeError(f"transpose: {perm} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(perm))

    return _make(np.ascontiguousarray(x.data.transpose(perm)), "transpose", (x,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence[Any], axis: int = 0) -> Tensor:
    ts = [as_tensor(x) for x in xs]
    if not ts:
        raise ShapeError("concat: nothing to concatenate")
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from e
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def _bw(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(y, "concat", ts, _bw)


def slice_axis(x: Any, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    ax = axis % x.ndim
    if not (0 <= start < stop <= x.shape[ax]):
        raise ShapeError(f"slice_axis: [{start}:{stop}] out of range for axis {ax} of {x.shape}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    idx = tuple(index)
    src = x.shape

    def _bw(g: np.ndarray):
        out = np.zeros(src)
        out[idx] = g
        return (out,)

    return _make(np.array(x.data[idx]), "slice_axis", (x,), _bw)


def broadcast_to(x: Any, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    _broadcast_shape(shape, x.shape, "broadcast_to")
    src = x.shape

    return _make(np.array(np.broadcast_to(x.data, shape)), "broadcast_to", (x,), lambda g: (_unbroadcast(g, src),))


def sum(x: Any, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    src = x.shape

    def _bw(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(np.sum(x.data, axis=axis, keepdims=keepdims)), "sum", (x,), _bw)


def mean(x: Any, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = math.prod(x.shape[a] for a in axes)
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def embedding(weight: Any, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = weight[ids[...], :]."""
    weight = as_tensor(weight)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding: ids must be integers, got {ids.dtype}")
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeError(f"embedding: id out of range [0, {vocab}) (min={ids.min()}, max={ids.max()})")
    src = weight.shape

    def _bw(g: np.ndarray):
        out = np.zeros(src)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, src[1]))
        return (out,)

    return _make(weight.data[ids], "embedding", (weight,), _bw)


def masked_mean(x: Any, mask: np.ndarray) -> Tensor:
    """Mean over axis 1 of x[B, L, D] restricted to positions where mask[B, L]."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=bool)
    if x.ndim != 3 or m.shape != x.shape[:2]:
        raise ShapeError(f"masked_mean: mask {m.shape} does not match x {x.shape}")
    counts = m.sum(axis=1).astype(np.float64)
    if np.any(counts == 0):
        raise DegenerateInputError("masked_mean: a row has no unmasked positions")
    w = m[..., None].astype(np.float64)
    c = counts[:, None]

    def _bw(g: np.ndarray):
        return (g[:, None, :] * w / c[:, :, None],)

    return _make(np.sum(x.data * w, axis=1) / c, "masked_mean", (x,), _bw)
