from .batching import (
    BatchBuilder,
    ImageBatch,
    TextBatch,
    batch_iter,
    batches_per_epoch,
    count_caption_collisions,
    epoch_order,
)
from .corpus import Corpus, SyntheticSample, generate_corpus, grammar_vocab, render
from .preprocess import CLIP_MEAN, CLIP_STD, preprocess
from .store import load_corpus, save_corpus
from .tokenizer import Vocab, detokenize, tokenize, tokenize_batch

__all__ = [
    "BatchBuilder",
    "CLIP_MEAN",
    "CLIP_STD",
    "Corpus",
    "ImageBatch",
    "SyntheticSample",
    "TextBatch",
    "Vocab",
    "batch_iter",
    "batches_per_epoch",
    "count_caption_collisions",
    "detokenize",
    "epoch_order",
    "generate_corpus",
    "grammar_vocab",
    "load_corpus",
    "preprocess",
    "render",
    "save_corpus",
    "tokenize",
    "tokenize_batch",
]
