"""Synthetic image-caption corpus: one geometric object of a given colour on
a textured background, captioned from a template grammar."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from ..config.models import DataConfig
from ..errors import CorpusError
from .tokenizer import Vocab

SPLITS = ("train", "val", "test")

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.75, 0.20),
    "blue": (0.15, 0.25, 0.95),
    "yellow": (0.95, 0.90, 0.10),
    "purple": (0.60, 0.15, 0.80),
    "orange": (1.00, 0.55, 0.05),
    "cyan": (0.10, 0.85, 0.90),
    "white": (0.97, 0.97, 0.97),
    "black": (0.05, 0.05, 0.05),
    "pink": (1.00, 0.55, 0.75),
}

MaskFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def _circle(dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    return dx * dx + dy * dy <= r * r


def _square(dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    h = 0.85 * r
    return (np.abs(dx) <= h) & (np.abs(dy) <= h)


def _triangle(dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    # apex up at (0, -r), base corners at (+-r, 0.8r)
    base = dy <= 0.8 * r
    left = 1.8 * dx + dy >= -r
    right = -1.8 * dx + dy >= -r
    return base & left & right


def _cross(dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    t = 0.3 * r
    return ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | ((np.abs(dy) <= t) & (np.abs(dx) <= r))


def _diamond(dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    return np.abs(dx) + np.abs(dy) <= r


def _ring(dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    d2 = dx * dx + dy * dy
    return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)


SHAPES: dict[str, MaskFn] = {
    "circle": _circle,
    "square": _square,
    "triangle": _triangle,
    "cross": _cross,
    "diamond": _diamond,
    "ring": _ring,
}


def check_grammar(cfg: DataConfig) -> None:
    bad_c = [c for c in cfg.colors if c not in PALETTE]
    bad_s = [s for s in cfg.shapes if s not in SHAPES]
    if bad_c or bad_s:
        raise CorpusError(
            f"cannot render colors {bad_c} / shapes {bad_s}; known colors {sorted(PALETTE)}, shapes {sorted(SHAPES)}"
        )


def render(color: str, shape: str, size: int, seed: int) -> np.ndarray:
    """uint8 raster [size, size, 3]; a pure function of its arguments."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5

    # textured background: low-saturation base, a soft gradient, pixel noise
    base = rng.uniform(0.25, 0.6) + rng.uniform(-0.06, 0.06, size=3)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    grad = 0.12 * ((np.cos(angle) * xx + np.sin(angle) * yy) / size - 0.5)
    bg = base[None, None, :] + grad[..., None] + rng.normal(0.0, 0.04, size=(size, size, 3))

    r = rng.uniform(0.2, 0.3) * size
    cx, cy = rng.uniform(0.38, 0.62, size=2) * size
    mask = SHAPES[shape](xx - cx, yy - cy, r)
    fg = np.asarray(PALETTE[color]) + rng.normal(0.0, 0.03, size=3)
    img = np.where(mask[..., None], fg[None, None, :], bg)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def sample_seed(corpus_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([corpus_seed, index]).generate_state(1, dtype=np.uint64)[0])


def split_of(corpus_seed: int, index: int) -> str:
    h = int.from_bytes(hashlib.sha256(f"{corpus_seed}:{index}".encode("ascii")).digest()[:8], "little")
    bucket = h % 10
    return "train" if bucket < 8 else ("val" if bucket == 8 else "test")


@dataclass
class SyntheticSample:
    id: int
    class_id: int
    template_index: int
    caption: str
    split: str
    seed: int
    image: np.ndarray = field(repr=False)

    def meta(self) -> dict:
        return {
            "id": self.id,
            "caption": self.caption,
            "class_id": self.class_id,
            "template_index": self.template_index,
            "split": self.split,
            "seed": self.seed,
        }


@dataclass
class Corpus:
    samples: list[SyntheticSample]
    config: DataConfig
    vocab: Vocab

    @property
    def class_names(self) -> list[str]:
        return self.config.class_names()

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def split(self, name: str) -> list[SyntheticSample]:
        if name not in SPLITS:
            raise CorpusError(f"unknown split '{name}', expected one of {SPLITS}")
        return [s for s in self.samples if s.split == name]

    def split_sizes(self) -> dict[str, int]:
        return {name: sum(1 for s in self.samples if s.split == name) for name in SPLITS}

    def digest(self) -> str:
        h = hashlib.sha256()
        for s in self.samples:
            h.update(json.dumps(s.meta(), sort_keys=True).encode("utf-8"))
            h.update(s.image.tobytes())
        return h.hexdigest()


def caption_for(cfg: DataConfig, class_id: int, template_index: int) -> str:
    return cfg.train_templates[template_index].format(cfg.class_name(class_id))


def grammar_vocab(cfg: DataConfig) -> Vocab:
    texts: Iterable[str] = list(cfg.train_templates) + list(cfg.eval_templates) + list(cfg.colors) + list(cfg.shapes)
    return Vocab.build(texts)


def generate_corpus(n: int, cfg: DataConfig, seed: int | None = None) -> Corpus:
    """Balanced corpus: sample i has class i mod C; split by hash of (seed, i),
    with holdout classes kept out of train."""
    if n < 1:
        raise CorpusError(f"n must be >= 1, got {n}")
    check_grammar(cfg)
    seed = cfg.seed if seed is None else seed
    holdout = set(cfg.holdout_classes)
    n_cls = cfg.num_classes
    samples: list[SyntheticSample] = []
    for i in range(n):
        cid = i % n_cls
        sseed = sample_seed(seed, i)
        rng = np.random.default_rng([sseed, 1])
        tidx = int(rng.integers(len(cfg.train_templates)))
        split = split_of(seed, i)
        if split == "train" and cid in holdout:
            split = "test"
        color = cfg.colors[cid // len(cfg.shapes)]
        shape = cfg.shapes[cid % len(cfg.shapes)]
        samples.append(
            SyntheticSample(
                id=i,
                class_id=cid,
                template_index=tidx,
                caption=caption_for(cfg, cid, tidx),
                split=split,
                seed=sseed,
                image=render(color, shape, cfg.raster_size, sseed),
            )
        )
    return Corpus(samples=samples, config=replace(cfg, seed=seed, n_samples=n), vocab=grammar_vocab(cfg))
