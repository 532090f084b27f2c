from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from rich.console import Console

from locktune.app_context import RunContext
from locktune.config.models import LabConfig
from locktune.data.corpus import Corpus, generate_corpus
from locktune.encoders.text import TextTower, init_text_weights

# Small enough that a training step is a few milliseconds.
TINY = {
    "data": {"n_samples": 96, "raster_size": 24},
    "vision": {
        "image_size": 16,
        "patch_size": 8,
        "embed_dim": 16,
        "depth": 1,
        "num_heads": 2,
        "output_dim": 8,
    },
    "text": {"embed_dim": 16, "depth": 1, "num_heads": 2, "output_dim": 8, "pooling": "mean"},
    "train": {
        "total_steps": 12,
        "warmup_steps": 2,
        "batch_size": 8,
        "checkpoint_every": 4,
        "val_batches": 1,
    },
    "pretrain_text": {"steps": 8, "warmup_steps": 2, "batch_size": 8},
    "pretrain_vision": {"steps": 6, "warmup_steps": 2, "batch_size": 8},
}


@pytest.fixture
def tiny_cfg() -> LabConfig:
    return LabConfig.from_obj(TINY)


@pytest.fixture(scope="session")
def tiny_corpus() -> Corpus:
    cfg = LabConfig.from_obj(TINY)
    return generate_corpus(cfg.data.n_samples, cfg.data)


def make_text_tower(cfg: LabConfig, corpus: Corpus, seed: int = 0) -> TextTower:
    """A random text tower flagged pretrained and frozen; stands in for the
    pretrain-text output where only the freeze contract matters."""
    text_cfg = replace(cfg.text, vocab_size=len(corpus.vocab)).validate()
    w = init_text_weights(text_cfg, seed=seed).mark_pretrained().freeze()
    return TextTower(weights=w, config=text_cfg, vocab=corpus.vocab)


@pytest.fixture
def text_tower(tiny_cfg: LabConfig, tiny_corpus: Corpus) -> TextTower:
    return make_text_tower(tiny_cfg, tiny_corpus)


def make_ctx(out_dir: Path, cfg: LabConfig) -> RunContext:
    return RunContext.create(out_dir, cfg, console=Console(quiet=True))


@pytest.fixture
def run_ctx(tmp_path: Path, tiny_cfg: LabConfig) -> RunContext:
    return make_ctx(tmp_path / "run", tiny_cfg)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
