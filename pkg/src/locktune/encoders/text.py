from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..config.models import EncoderConfig
from ..data.tokenizer import Vocab, tokenize_batch
from ..errors import ConfigError, TokenizationError
from ..tensor import Tensor, no_grad, ops
from .blocks import block, block_shapes, init_block, init_norm, norm
from .weights import TowerWeights, normal

TOKEN_EMBED = "text.token_embed.weight"
POS_EMBED = "text.pos_embed"
FINAL_NORM = "text.norm"
PROJ = "text.proj.weight"


def text_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {
        TOKEN_EMBED: (cfg.vocab_size, d),
        POS_EMBED: (cfg.max_seq_len, d),
        f"{FINAL_NORM}.weight": (d,),
        f"{FINAL_NORM}.bias": (d,),
        PROJ: (d, cfg.output_dim),
    }
    for i in range(cfg.depth):
        shapes.update(block_shapes(f"text.blocks.{i}", cfg))
    return shapes


def init_text_weights(cfg: EncoderConfig, seed: int) -> TowerWeights:
    if cfg.vocab_size <= 0:
        raise ConfigError("text tower needs vocab_size > 0 (build it from the corpus vocab)")
    cfg.validate()
    rng = np.random.default_rng(seed)
    w = TowerWeights()
    w.add(TOKEN_EMBED, normal(rng, (cfg.vocab_size, cfg.embed_dim), cfg.init_std))
    w.add(POS_EMBED, normal(rng, (cfg.max_seq_len, cfg.embed_dim), cfg.init_std))
    for i in range(cfg.depth):
        init_block(w, f"text.blocks.{i}", cfg, rng)
    init_norm(w, FINAL_NORM, cfg.embed_dim)
    w.add(PROJ, normal(rng, (cfg.embed_dim, cfg.output_dim), cfg.init_std))
    return w


def text_forward(token_ids: np.ndarray, mask: np.ndarray, weights: TowerWeights, cfg: EncoderConfig) -> Tensor:
    """Bidirectional encoder, masked mean over real tokens, linear projection,
    l2 normalisation. Returns [B, output_dim]."""
    ids = np.asarray(token_ids)
    m = np.asarray(mask, dtype=bool)
    if ids.ndim != 2 or m.shape != ids.shape:
        raise ConfigError(f"text_forward: ids {ids.shape} and mask {m.shape} must both be [B, L]")
    b, length = ids.shape
    if length > cfg.max_seq_len:
        raise TokenizationError(f"sequence length {length} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise TokenizationError(f"token id out of vocabulary [0, {cfg.vocab_size}): min={ids.min()} max={ids.max()}")
    weights.expect_shapes(text_shapes(cfg), what="text_forward")

    x = ops.embedding(weights[TOKEN_EMBED], ids)
    x = ops.add(x, ops.slice_axis(weights[POS_EMBED], 0, 0, length))
    for i in range(cfg.depth):
        x = block(x, weights, f"text.blocks.{i}", cfg, key_mask=m)
    x = norm(x, weights, FINAL_NORM, cfg.ln_eps)
    pooled = ops.masked_mean(x, m)
    return ops.l2_normalize(ops.matmul(pooled, weights[PROJ]), axis=-1)


@dataclass
class TextTower:
    """Text encoder bundle: weights, architecture and the vocabulary it reads."""

    weights: TowerWeights
    config: EncoderConfig
    vocab: Vocab

    def forward(self, captions: Sequence[str]) -> Tensor:
        ids, mask = tokenize_batch(captions, self.vocab, self.config.max_seq_len)
        return text_forward(ids, mask, self.weights, self.config)

    def embed_captions(self, captions: Sequence[str], chunk: int = 256) -> np.ndarray:
        """Read-only embeddings [N, output_dim] as a plain array."""
        if not captions:
            return np.zeros((0, self.config.output_dim))
        out: list[np.ndarray] = []
        with no_grad():
            for i in range(0, len(captions), chunk):
                out.append(self.forward(captions[i : i + chunk]).data)
        return np.concatenate(out, axis=0)

    def checksum(self) -> str:
        return self.weights.checksum()
