from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from ..errors import ConfigError
from ..tensor import Tensor
from .corpus import SyntheticSample
from .preprocess import preprocess
from .tokenizer import Vocab, tokenize_batch


@dataclass
class ImageBatch:
    pixels: Tensor  # [B, 3, S, S]
    class_ids: np.ndarray
    sample_ids: np.ndarray


@dataclass
class TextBatch:
    token_ids: np.ndarray  # int64 [B, L]
    mask: np.ndarray  # bool [B, L]
    captions: list[str]
    class_ids: np.ndarray
    # row i of the text batch is the positive for row pair_index[i] of the image batch
    pair_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self) -> None:
        if self.pair_index.size == 0:
            self.pair_index = np.arange(len(self.captions), dtype=np.int64)


@dataclass
class BatchBuilder:
    """Turns samples into aligned (ImageBatch, TextBatch) pairs.

    Eval-mode pixels are cached by sample id; train-mode pixels are drawn
    fresh from the caller's rng.
    """

    vocab: Vocab
    image_size: int
    max_seq_len: int
    crop_scale: tuple[float, float] = (0.9, 1.0)
    _eval_cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def pixels(self, sample: SyntheticSample, train_mode: bool, rng: np.random.Generator | None) -> np.ndarray:
        if train_mode:
            return preprocess(sample.image, self.image_size, True, rng, self.crop_scale)
        cached = self._eval_cache.get(sample.id)
        if cached is None:
            cached = preprocess(sample.image, self.image_size)
            self._eval_cache[sample.id] = cached
        return cached

    def images(
        self, samples: Sequence[SyntheticSample], train_mode: bool = False, rng: np.random.Generator | None = None
    ) -> ImageBatch:
        px = np.stack([self.pixels(s, train_mode, rng) for s in samples]) if samples else np.zeros(
            (0, 3, self.image_size, self.image_size)
        )
        return ImageBatch(
            pixels=Tensor(px),
            class_ids=np.array([s.class_id for s in samples], dtype=np.int64),
            sample_ids=np.array([s.id for s in samples], dtype=np.int64),
        )

    def texts(self, samples: Sequence[SyntheticSample]) -> TextBatch:
        captions = [s.caption for s in samples]
        ids, mask = tokenize_batch(captions, self.vocab, self.max_seq_len)
        return TextBatch(
            token_ids=ids,
            mask=mask,
            captions=captions,
            class_ids=np.array([s.class_id for s in samples], dtype=np.int64),
        )

    def build(
        self, samples: Sequence[SyntheticSample], train_mode: bool = False, rng: np.random.Generator | None = None
    ) -> tuple[ImageBatch, TextBatch]:
        return self.images(samples, train_mode, rng), self.texts(samples)


def batches_per_epoch(n: int, batch_size: int) -> int:
    return n // batch_size


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iter(
    samples: Sequence[SyntheticSample],
    batch_size: int,
    seed: int,
    epoch: int,
    builder: BatchBuilder,
    *,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    start: int = 0,
) -> Iterator[tuple[ImageBatch, TextBatch]]:
    """Epoch-seeded shuffle; the last partial batch is dropped. `start` skips
    that many batches of the epoch (used on resume)."""
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2 (InfoNCE needs negatives), got {batch_size}")
    order = epoch_order(len(samples), seed, epoch)
    for b in range(start, batches_per_epoch(len(samples), batch_size)):
        idx = order[b * batch_size : (b + 1) * batch_size]
        yield builder.build([samples[i] for i in idx], train_mode, rng)


def count_caption_collisions(captions: Sequence[str]) -> int:
    """Unordered pairs of rows carrying the identical caption string (false
    negatives under InfoNCE)."""
    return sum(c * (c - 1) // 2 for c in Counter(captions).values())
