from __future__ import annotations

import math

import numpy as np

from ..config.models import EncoderConfig
from ..tensor import Tensor, ops
from .weights import TowerWeights, normal


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = ops.matmul(x, w)
    return y if b is None else ops.add(y, b)


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    b, t, d = x.shape
    return x.reshape(b, t, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def attention(
    xq: Tensor,
    xkv: Tensor,
    w: TowerWeights,
    prefix: str,
    num_heads: int,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Multi-head attention of queries xq[B,Tq,D] over xkv[B,Tk,D].

    key_mask[B,Tk] marks keys that may be attended to.
    """
    q = _split_heads(linear(xq, w[f"{prefix}.q.weight"], w[f"{prefix}.q.bias"]), num_heads)
    k = _split_heads(linear(xkv, w[f"{prefix}.k.weight"], w[f"{prefix}.k.bias"]), num_heads)
    v = _split_heads(linear(xkv, w[f"{prefix}.v.weight"], w[f"{prefix}.v.bias"]), num_heads)
    scores = ops.scale(ops.matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / math.sqrt(q.shape[-1]))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, None, :]
    attn = ops.softmax(scores, axis=-1, mask=mask)
    out = _merge_heads(ops.matmul(attn, v))
    return linear(out, w[f"{prefix}.out.weight"], w[f"{prefix}.out.bias"])


def mlp(x: Tensor, w: TowerWeights, prefix: str) -> Tensor:
    h = ops.gelu(linear(x, w[f"{prefix}.fc1.weight"], w[f"{prefix}.fc1.bias"]))
    return linear(h, w[f"{prefix}.fc2.weight"], w[f"{prefix}.fc2.bias"])


def norm(x: Tensor, w: TowerWeights, prefix: str, eps: float) -> Tensor:
    return ops.layer_norm(x, w[f"{prefix}.weight"], w[f"{prefix}.bias"], eps)


def block(x: Tensor, w: TowerWeights, prefix: str, cfg: EncoderConfig, key_mask: np.ndarray | None = None) -> Tensor:
    """Pre-LN transformer block."""
    h = norm(x, w, f"{prefix}.ln1", cfg.ln_eps)
    x = ops.add(x, attention(h, h, w, f"{prefix}.attn", cfg.num_heads, key_mask))
    h = norm(x, w, f"{prefix}.ln2", cfg.ln_eps)
    return ops.add(x, mlp(h, w, f"{prefix}.mlp"))


# ---------------------------------------------------------
# initialisation
# ---------------------------------------------------------
def init_linear(w: TowerWeights, prefix: str, d_in: int, d_out: int, rng: np.random.Generator, std: float, bias: bool = True) -> None:
    w.add(f"{prefix}.weight", normal(rng, (d_in, d_out), std))
    if bias:
        w.add(f"{prefix}.bias", np.zeros(d_out))


def init_norm(w: TowerWeights, prefix: str, d: int) -> None:
    w.add(f"{prefix}.weight", np.ones(d))
    w.add(f"{prefix}.bias", np.zeros(d))


def init_attention(w: TowerWeights, prefix: str, d: int, rng: np.random.Generator, std: float) -> None:
    for part in ("q", "k", "v", "out"):
        init_linear(w, f"{prefix}.{part}", d, d, rng, std)


def init_block(w: TowerWeights, prefix: str, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    d, std = cfg.embed_dim, cfg.init_std
    init_norm(w, f"{prefix}.ln1", d)
    init_attention(w, f"{prefix}.attn", d, rng, std)
    init_norm(w, f"{prefix}.ln2", d)
    init_linear(w, f"{prefix}.mlp.fc1", d, cfg.mlp_dim, rng, std)
    init_linear(w, f"{prefix}.mlp.fc2", cfg.mlp_dim, d, rng, std)


def block_shapes(prefix: str, cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, m = cfg.embed_dim, cfg.mlp_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for ln in ("ln1", "ln2"):
        shapes[f"{prefix}.{ln}.weight"] = (d,)
        shapes[f"{prefix}.{ln}.bias"] = (d,)
    for part in ("q", "k", "v", "out"):
        shapes[f"{prefix}.attn.{part}.weight"] = (d, d)
        shapes[f"{prefix}.attn.{part}.bias"] = (d,)
    shapes[f"{prefix}.mlp.fc1.weight"] = (d, m)
    shapes[f"{prefix}.mlp.fc1.bias"] = (m,)
    shapes[f"{prefix}.mlp.fc2.weight"] = (m, d)
    shapes[f"{prefix}.mlp.fc2.bias"] = (d,)
    return shapes
