from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from ..config.models import EncoderConfig
from ..errors import ConfigError
from ..tensor import Tensor, ops
from .blocks import attention, init_attention
from .weights import TowerWeights, normal

POOL_PREFIX = "vision.pool"
CLS_TOKEN = f"{POOL_PREFIX}.cls_token"
MAP_PROBE = f"{POOL_PREFIX}.probe"

PoolFn = Callable[[Tensor, TowerWeights, EncoderConfig], Tensor]
InitFn = Callable[[TowerWeights, EncoderConfig, np.random.Generator], None]
ShapeFn = Callable[[EncoderConfig], Dict[str, tuple]]


@dataclass(frozen=True)
class PoolingStrategy:
    name: str
    extra_tokens: int
    apply: PoolFn
    init: InitFn
    shapes: ShapeFn


@dataclass
class PoolingRegistry:
    _items: Dict[str, PoolingStrategy] = None  # type: ignore

    def __post_init__(self):
        if self._items is None:
            self._items = {}

    def register(self, strategy: PoolingStrategy) -> None:
        if strategy.name in self._items:
            raise ValueError(f"Pooling strategy already registered: {strategy.name}")
        self._items[strategy.name] = strategy

    def get(self, name: str) -> PoolingStrategy:
        if name not in self._items:
            known = ", ".join(sorted(self._items)) or "(none)"
            raise ConfigError(f"unknown pooling strategy '{name}'. Known: {known}")
        return self._items[name]

    def get_optional(self, name: str) -> Optional[PoolingStrategy]:
        return self._items.get(name)

    def names(self) -> list[str]:
        return sorted(self._items)


# ---- cls_token: the backbone prepends a learned token, read it back out ----
def _cls_apply(tokens: Tensor, w: TowerWeights, cfg: EncoderConfig) -> Tensor:
    if CLS_TOKEN not in w:
        raise ConfigError("cls_token pooling needs a CLS slot but the weights carry no cls token")
    b, _, d = tokens.shape
    return ops.slice_axis(tokens, 1, 0, 1).reshape(b, d)


def _cls_init(w: TowerWeights, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    w.add(CLS_TOKEN, normal(rng, (cfg.embed_dim,), cfg.init_std))


# ---- mean ----
def _mean_apply(tokens: Tensor, w: TowerWeights, cfg: EncoderConfig) -> Tensor:
    return ops.mean(tokens, axis=1)


def _no_init(w: TowerWeights, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    return None


# ---- map: one learned probe cross-attends over all tokens ----
def _map_apply(tokens: Tensor, w: TowerWeights, cfg: EncoderConfig) -> Tensor:
    if MAP_PROBE not in w:
        raise ConfigError("map pooling needs 'vision.pool.probe' in the weights")
    b, _, d = tokens.shape
    probe = ops.broadcast_to(w[MAP_PROBE], (b, 1, d))
    out = attention(probe, tokens, w, f"{POOL_PREFIX}.attn", cfg.num_heads)
    return out.reshape(b, d)


def _map_init(w: TowerWeights, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    w.add(MAP_PROBE, normal(rng, (cfg.embed_dim,), cfg.init_std))
    init_attention(w, f"{POOL_PREFIX}.attn", cfg.embed_dim, rng, cfg.init_std)


def _map_shapes(cfg: EncoderConfig) -> dict[str, tuple]:
    d = cfg.embed_dim
    shapes: dict[str, tuple] = {MAP_PROBE: (d,)}
    for part in ("q", "k", "v", "out"):
        shapes[f"{POOL_PREFIX}.attn.{part}.weight"] = (d, d)
        shapes[f"{POOL_PREFIX}.attn.{part}.bias"] = (d,)
    return shapes


POOLING = PoolingRegistry()
POOLING.register(
    PoolingStrategy("cls_token", 1, _cls_apply, _cls_init, lambda cfg: {CLS_TOKEN: (cfg.embed_dim,)})
)
POOLING.register(PoolingStrategy("mean", 0, _mean_apply, _no_init, lambda cfg: {}))
POOLING.register(PoolingStrategy("map", 0, _map_apply, _map_init, _map_shapes))


def pool(tokens: Tensor, strategy: str, weights: TowerWeights, cfg: EncoderConfig) -> Tensor:
    """Reduce token states [B,T,D] to one vector per image [B,D]."""
    if tokens.ndim != 3:
        raise ConfigError(f"pool expects tokens [B,T,D], got {tokens.shape}")
    return POOLING.get(strategy).apply(tokens, weights, cfg)
