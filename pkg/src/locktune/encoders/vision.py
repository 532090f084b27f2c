from __future__ import annotations

from typing import Any

import numpy as np

from ..config.models import EncoderConfig
from ..errors import ConfigError, ShapeError
from ..tensor import Tensor, ops
from .blocks import block, block_shapes, init_block, init_linear, init_norm, linear, norm
from .pooling import POOLING, pool
from .weights import TowerWeights, normal

PATCH_EMBED = "vision.patch_embed"
POS_EMBED = "vision.pos_embed"
FINAL_NORM = "vision.norm"
PROJ = "vision.proj.weight"


def patchify(images: Any, patch_size: int) -> Tensor:
    """[B, C, H, W] -> [B, N, C*p*p]; patches row-major, each flattened (c, y, x)."""
    x = ops.as_tensor(images)
    if x.ndim != 4:
        raise ShapeError(f"patchify expects [B, C, H, W], got {x.shape}")
    b, c, h, w = x.shape
    p = int(patch_size)
    if p <= 0 or h % p or w % p:
        raise ShapeError(f"patchify: image {h}x{w} is not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = x.reshape(b, c, gh, p, gw, p).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, gh * gw, c * p * p)


def unpatchify(patches: Any, patch_size: int, image_size: int, channels: int = 3) -> Tensor:
    x = ops.as_tensor(patches)
    p, s = int(patch_size), int(image_size)
    if s % p:
        raise ShapeError(f"unpatchify: image {s} is not divisible by patch size {p}")
    g = s // p
    b = x.shape[0]
    if x.shape[1:] != (g * g, channels * p * p):
        raise ShapeError(f"unpatchify: patches {x.shape} do not tile a {channels}x{s}x{s} image")
    x = x.reshape(b, g, g, channels, p, p).transpose(0, 3, 1, 4, 2, 5)
    return x.reshape(b, channels, s, s)


def vision_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {
        f"{PATCH_EMBED}.weight": (cfg.in_channels * cfg.patch_size**2, d),
        f"{PATCH_EMBED}.bias": (d,),
        POS_EMBED: (cfg.num_patches, d),
        f"{FINAL_NORM}.weight": (d,),
        f"{FINAL_NORM}.bias": (d,),
        PROJ: (d, cfg.output_dim),
    }
    for i in range(cfg.depth):
        shapes.update(block_shapes(f"vision.blocks.{i}", cfg))
    shapes.update(POOLING.get(cfg.pooling).shapes(cfg))
    return shapes


def init_vision_weights(cfg: EncoderConfig, seed: int) -> TowerWeights:
    """Fresh ViT. Pooling-head parameters are drawn last so the backbone is
    identical for every pooling strategy under one seed."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    w = TowerWeights()
    std = cfg.init_std
    init_linear(w, PATCH_EMBED, cfg.in_channels * cfg.patch_size**2, cfg.embed_dim, rng, std)
    w.add(POS_EMBED, normal(rng, (cfg.num_patches, cfg.embed_dim), std))
    for i in range(cfg.depth):
        init_block(w, f"vision.blocks.{i}", cfg, rng)
    init_norm(w, FINAL_NORM, cfg.embed_dim)
    w.add(PROJ, normal(rng, (cfg.embed_dim, cfg.output_dim), std))
    POOLING.get(cfg.pooling).init(w, cfg, rng)
    return w


def vit_forward(images: Any, weights: TowerWeights, cfg: EncoderConfig) -> Tensor:
    """Token states [B, N + extra, D]; extra is 1 for cls_token pooling."""
    x = ops.as_tensor(images)
    expected = (cfg.in_channels, cfg.image_size, cfg.image_size)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ConfigError(f"vit_forward: images {x.shape} do not match config [B, {expected}]")
    weights.expect_shapes(vision_shapes(cfg), what="vit_forward")

    tokens = linear(patchify(x, cfg.patch_size), weights[f"{PATCH_EMBED}.weight"], weights[f"{PATCH_EMBED}.bias"])
    tokens = ops.add(tokens, weights[POS_EMBED])
    strategy = POOLING.get(cfg.pooling)
    if strategy.extra_tokens:
        b, _, d = tokens.shape
        cls = ops.broadcast_to(weights["vision.pool.cls_token"], (b, 1, d))
        tokens = ops.concat([cls, tokens], axis=1)
    for i in range(cfg.depth):
        tokens = block(tokens, weights, f"vision.blocks.{i}", cfg)
    return norm(tokens, weights, FINAL_NORM, cfg.ln_eps)


def image_features(images: Any, weights: TowerWeights, cfg: EncoderConfig) -> Tensor:
    """Pooled, unprojected features [B, D]."""
    return pool(vit_forward(images, weights, cfg), cfg.pooling, weights, cfg)


def embed_image(images: Any, weights: TowerWeights, cfg: EncoderConfig) -> Tensor:
    """Unit-norm image embeddings [B, output_dim] in the shared space."""
    return ops.l2_normalize(ops.matmul(image_features(images, weights, cfg), weights[PROJ]), axis=-1)
