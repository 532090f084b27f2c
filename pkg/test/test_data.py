from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from locktune.config.models import DataConfig
from locktune.data.batching import BatchBuilder, batch_iter, batches_per_epoch, count_caption_collisions
from locktune.data.corpus import SPLITS, caption_for, generate_corpus, render
from locktune.data.preprocess import CLIP_MEAN, CLIP_STD, preprocess
from locktune.data.store import CAPTIONS_FILE, decode_ppm, encode_ppm, load_corpus, save_corpus
from locktune.data.tokenizer import SPECIALS, Vocab, detokenize, tokenize, tokenize_batch
from locktune.errors import ConfigError, CorpusError, DegenerateInputError, TokenizationError


@pytest.fixture(scope="module")
def small_cfg() -> DataConfig:
    return DataConfig(n_samples=64, raster_size=24)


# -------------------------------------------------------------------------------------------------
# corpus
# -------------------------------------------------------------------------------------------------

def test_corpus_is_a_pure_function_of_seed(small_cfg: DataConfig):
    a = generate_corpus(40, small_cfg, seed=3)
    b = generate_corpus(40, small_cfg, seed=3)
    c = generate_corpus(40, small_cfg, seed=4)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_corpus_is_class_balanced_and_captioned(small_cfg: DataConfig):
    corpus = generate_corpus(small_cfg.num_classes * 3, small_cfg)
    counts = np.bincount([s.class_id for s in corpus.samples], minlength=corpus.num_classes)
    assert set(counts.tolist()) == {3}
    for s in corpus.samples:
        assert s.caption == caption_for(small_cfg, s.class_id, s.template_index)
        assert corpus.class_names[s.class_id] in s.caption
        assert s.image.shape == (24, 24, 3) and s.image.dtype == np.uint8


def test_splits_cover_every_sample(small_cfg: DataConfig):
    corpus = generate_corpus(200, small_cfg)
    sizes = corpus.split_sizes()
    assert sum(sizes.values()) == 200
    assert set(sizes) == set(SPLITS)
    assert sizes["train"] > sizes["val"] and sizes["train"] > sizes["test"]


def test_split_of_a_sample_does_not_depend_on_corpus_size(small_cfg: DataConfig):
    small = generate_corpus(30, small_cfg)
    large = generate_corpus(60, small_cfg)
    assert [s.split for s in small.samples] == [s.split for s in large.samples[:30]]


def test_holdout_classes_never_reach_train(small_cfg: DataConfig):
    cfg = replace(small_cfg, holdout_classes=[0, 5]).validate()
    corpus = generate_corpus(160, cfg)
    assert all(s.class_id not in (0, 5) for s in corpus.split("train"))
    assert any(s.class_id == 0 for s in corpus.split("test"))


def test_unknown_split_and_grammar_rejected(small_cfg: DataConfig):
    corpus = generate_corpus(8, small_cfg)
    with pytest.raises(CorpusError):
        corpus.split("holdout")
    with pytest.raises(CorpusError):
        generate_corpus(4, replace(small_cfg, colors=["mauve"]))
    with pytest.raises(CorpusError):
        generate_corpus(0, small_cfg)


def test_render_draws_the_shape_in_its_color():
    img = render("red", "square", 32, seed=11).astype(float) / 255.0
    centre = img[15:17, 15:17].reshape(-1, 3).mean(axis=0)
    assert centre[0] > 0.7 and centre[1] < 0.3 and centre[2] < 0.3


def test_data_config_validation():
    with pytest.raises(ConfigError):
        DataConfig(train_templates=["no slot"]).validate()
    with pytest.raises(ConfigError):
        DataConfig(crop_scale=(0.0, 1.0)).validate()
    with pytest.raises(ConfigError):
        DataConfig(holdout_classes=[99]).validate()


# -------------------------------------------------------------------------------------------------
# tokenizer
# -------------------------------------------------------------------------------------------------

def test_tokenize_wraps_and_pads():
    vocab = Vocab.build(["a photo of a {}", "red circle"])
    ids, mask = tokenize("A photo of a RED circle", vocab, 10)
    assert ids[0] == vocab.bos_id and ids[7] == vocab.eos_id
    assert mask.tolist() == [True] * 8 + [False] * 2
    assert ids[8:].tolist() == [vocab.pad_id] * 2
    assert detokenize(ids, vocab) == "a photo of a red circle"


def test_unknown_words_map_to_unk():
    vocab = Vocab.build(["a {}"])
    ids, _ = tokenize("a zebra", vocab, 5)
    assert ids[2] == vocab.unk_id


def test_caption_too_long_raises():
    vocab = Vocab.build(["a b c"])
    with pytest.raises(TokenizationError):
        tokenize("a b c", vocab, 4)


def test_vocab_starts_with_specials_and_round_trips(tmp_path: Path):
    vocab = Vocab.build(["a photo of a {}"])
    assert tuple(vocab.tokens[:4]) == SPECIALS
    vocab.save(tmp_path / "vocab.txt")
    assert Vocab.load(tmp_path / "vocab.txt").tokens == vocab.tokens
    with pytest.raises(TokenizationError):
        Vocab(["a", "b"])


def test_corpus_vocab_covers_eval_templates(small_cfg: DataConfig):
    corpus = generate_corpus(4, small_cfg)
    for t in small_cfg.eval_templates:
        ids, _ = tokenize(t.format("red circle"), corpus.vocab, 12)
        assert corpus.vocab.unk_id not in ids.tolist()


# -------------------------------------------------------------------------------------------------
# preprocessing
# -------------------------------------------------------------------------------------------------

def test_eval_preprocess_equals_train_with_unit_crop_scale(rng):
    raster = render("blue", "cross", 40, seed=2)
    a = preprocess(raster, 16)
    b = preprocess(raster, 16, train_mode=True, rng=rng, crop_scale=(1.0, 1.0))
    assert a.shape == (3, 16, 16)
    np.testing.assert_array_equal(a, b)


def test_preprocess_normalises_with_channel_statistics():
    flat = np.full((8, 8, 3), 255, dtype=np.uint8)
    out = preprocess(flat, 8)
    np.testing.assert_allclose(out[:, 0, 0], (1.0 - CLIP_MEAN) / CLIP_STD)


def test_train_preprocess_needs_rng_and_varies():
    raster = render("green", "triangle", 40, seed=5)
    with pytest.raises(ValueError):
        preprocess(raster, 16, train_mode=True)
    r = np.random.default_rng(0)
    views = [preprocess(raster, 16, train_mode=True, rng=r, crop_scale=(0.5, 0.9)) for _ in range(4)]
    assert any(not np.array_equal(views[0], v) for v in views[1:])


def test_preprocess_rejects_tiny_or_non_rgb_rasters():
    with pytest.raises(DegenerateInputError):
        preprocess(np.zeros((4, 4, 3), dtype=np.uint8), 16)
    with pytest.raises(DegenerateInputError):
        preprocess(np.zeros((16, 16), dtype=np.uint8), 16)


# -------------------------------------------------------------------------------------------------
# batching
# -------------------------------------------------------------------------------------------------

def test_batch_iter_drops_partial_batch_and_aligns_pairs(small_cfg: DataConfig):
    corpus = generate_corpus(21, small_cfg)
    builder = BatchBuilder(corpus.vocab, image_size=16, max_seq_len=12)
    batches = list(batch_iter(corpus.samples, 4, seed=0, epoch=0, builder=builder))
    assert len(batches) == batches_per_epoch(21, 4) == 5
    seen: set[int] = set()
    for img, txt in batches:
        assert img.pixels.shape == (4, 3, 16, 16)
        assert txt.token_ids.shape == (4, 12)
        np.testing.assert_array_equal(img.class_ids, txt.class_ids)
        np.testing.assert_array_equal(txt.pair_index, np.arange(4))
        seen.update(img.sample_ids.tolist())
    assert len(seen) == 20


def test_epoch_order_is_seeded(small_cfg: DataConfig):
    corpus = generate_corpus(16, small_cfg)
    builder = BatchBuilder(corpus.vocab, image_size=16, max_seq_len=12)

    def ids(seed: int, epoch: int) -> list[int]:
        return [int(i) for img, _ in batch_iter(corpus.samples, 4, seed, epoch, builder) for i in img.sample_ids]

    assert ids(0, 0) == ids(0, 0)
    assert ids(0, 0) != ids(0, 1)


def test_batch_iter_start_skips_batches(small_cfg: DataConfig):
    corpus = generate_corpus(16, small_cfg)
    builder = BatchBuilder(corpus.vocab, image_size=16, max_seq_len=12)
    full = [img.sample_ids.tolist() for img, _ in batch_iter(corpus.samples, 4, 1, 0, builder)]
    rest = [img.sample_ids.tolist() for img, _ in batch_iter(corpus.samples, 4, 1, 0, builder, start=2)]
    assert rest == full[2:]


def test_batch_of_one_rejected(small_cfg: DataConfig):
    corpus = generate_corpus(4, small_cfg)
    builder = BatchBuilder(corpus.vocab, image_size=16, max_seq_len=12)
    with pytest.raises(ConfigError):
        next(batch_iter(corpus.samples, 1, 0, 0, builder))


def test_caption_collisions_count_pairs():
    assert count_caption_collisions(["a", "b", "a", "a", "c", "b"]) == 4
    assert count_caption_collisions([]) == 0
    assert count_caption_collisions(["a", "b", "c"]) == 0


@pytest.mark.parametrize("seed", range(8))
def test_caption_collisions_match_pairwise_scan(seed: int):
    rng = np.random.default_rng(seed)
    pool = [f"a photo of caption {k}" for k in range(int(rng.integers(1, 6)))]
    captions = [pool[i] for i in rng.integers(0, len(pool), size=int(rng.integers(0, 40)))]
    scan = sum(
        1 for i in range(len(captions)) for j in range(i + 1, len(captions)) if captions[i] == captions[j]
    )
    assert count_caption_collisions(captions) == scan


def test_tokenize_batch_stacks_rows(small_cfg: DataConfig):
    corpus = generate_corpus(3, small_cfg)
    ids, mask = tokenize_batch([s.caption for s in corpus.samples], corpus.vocab, 12)
    assert ids.shape == mask.shape == (3, 12)
    assert ids.dtype == np.int64 and mask.dtype == bool


# -------------------------------------------------------------------------------------------------
# store
# -------------------------------------------------------------------------------------------------

def test_corpus_store_roundtrip(tmp_path: Path, small_cfg: DataConfig):
    corpus = generate_corpus(12, small_cfg, seed=7)
    save_corpus(corpus, tmp_path / "corpus")
    back = load_corpus(tmp_path / "corpus")
    assert back.digest() == corpus.digest()
    assert back.vocab.tokens == corpus.vocab.tokens
    assert back.config == corpus.config


def test_ppm_codec_is_lossless(rng):
    raster = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    np.testing.assert_array_equal(decode_ppm(encode_ppm(raster)), raster)


def test_load_corpus_errors(tmp_path: Path, small_cfg: DataConfig):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path / "missing")
    root = save_corpus(generate_corpus(4, small_cfg), tmp_path / "c")
    (root / "images" / "000002.ppm").unlink()
    with pytest.raises(CorpusError):
        load_corpus(root)
    (root / CAPTIONS_FILE).write_text("{not json\n", encoding="utf-8")
    with pytest.raises(CorpusError):
        load_corpus(root)
