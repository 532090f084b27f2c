from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from conftest import make_ctx, unit_rows
from locktune.data.corpus import Corpus
from locktune.encoders.vision import init_vision_weights
from locktune.errors import ConfigError, DegenerateInputError
from locktune.eval.metrics import (
    class_text_embeddings,
    fill_templates,
    modality_gap,
    partner_ranks,
    prompt_similarity,
    recall_at_k,
    recall_table,
    zero_shot_classify,
    zero_shot_predict,
)
from locktune.eval.report import CSV_FIELDS, REPORT_FILE, RESULTS_FILE, evaluate, run_eval
from locktune.trainer.loop import train


# -------------------------------------------------------------------------------------------------
# brute-force oracles
# -------------------------------------------------------------------------------------------------

def _brute_zero_shot(img: np.ndarray, cls: np.ndarray, labels: np.ndarray) -> float:
    hits = 0
    for i in range(img.shape[0]):
        best, best_c = -np.inf, -1
        for c in range(cls.shape[0]):
            s = float(img[i] @ cls[c])
            if s > best:
                best, best_c = s, c
        hits += best_c == labels[i]
    return hits / img.shape[0]


def _brute_recall(queries: np.ndarray, keys: np.ndarray, k: int) -> float:
    hits = 0
    n = queries.shape[0]
    for i in range(n):
        sims = [float(queries[i] @ keys[j]) for j in range(n)]
        rank = sum(1 for j in range(n) if sims[j] > sims[i] or (sims[j] == sims[i] and j < i))
        hits += rank < k
    return hits / n


def _integer_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    # small integers: ties are common and every dot product is exact
    return rng.integers(-2, 3, size=(n, d)).astype(float)


INSTANCES = [(n, c, seed) for n in range(2, 11) for c in range(2, 11) for seed in range(2)]


@pytest.mark.parametrize("n,c,seed", INSTANCES)
def test_zero_shot_matches_brute_force(n: int, c: int, seed: int):
    rng = np.random.default_rng([n, c, seed])
    img = _integer_rows(rng, n, 3)
    cls = _integer_rows(rng, c, 3)
    labels = rng.integers(0, c, size=n)
    assert zero_shot_classify(img, cls, labels, check_unit=False) == _brute_zero_shot(img, cls, labels)


@pytest.mark.parametrize("n", range(2, 11))
def test_recall_matches_brute_force_in_both_directions(n: int):
    for seed in range(4):
        rng = np.random.default_rng([n, seed])
        img = _integer_rows(rng, n, 3)
        txt = _integer_rows(rng, n, 3)
        for k in range(1, n + 1):
            assert recall_at_k(img, txt, k, "image_to_text", check_unit=False) == _brute_recall(img, txt, k)
            assert recall_at_k(img, txt, k, "text_to_image", check_unit=False) == _brute_recall(txt, img, k)


def test_recall_is_monotone_in_k_and_reaches_one(rng):
    img, txt = unit_rows(rng, 9, 4), unit_rows(rng, 9, 4)
    for d in ("image_to_text", "text_to_image"):
        values = [recall_at_k(img, txt, k, d) for k in range(1, 10)]
        assert all(a <= b for a, b in zip(values, values[1:]))
        assert values[-1] == 1.0


def test_ties_go_to_the_lower_index():
    img = np.array([[1.0, 0.0], [1.0, 0.0]])
    ranks = partner_ranks(img, img, "image_to_text")
    assert ranks.tolist() == [0, 1]
    assert zero_shot_predict(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0], [0.0, 1.0]])).tolist() == [0]


def test_metrics_are_invariant_to_positive_rescaling():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, c = int(rng.integers(2, 11)), int(rng.integers(2, 11))
        img, txt, cls = rng.normal(size=(n, 5)), rng.normal(size=(n, 5)), rng.normal(size=(c, 5))
        labels = rng.integers(0, c, size=n)
        a, b = rng.uniform(0.1, 10.0, size=2)
        assert zero_shot_classify(img, cls, labels, check_unit=False) == zero_shot_classify(
            a * img, b * cls, labels, check_unit=False
        )
        k = int(rng.integers(1, n + 1))
        for d in ("image_to_text", "text_to_image"):
            assert recall_at_k(img, txt, k, d, check_unit=False) == recall_at_k(
                a * img, b * txt, k, d, check_unit=False
            )


def test_metric_argument_errors(rng):
    img = unit_rows(rng, 4, 3)
    with pytest.raises(ConfigError):
        recall_at_k(img, img, 5)
    with pytest.raises(ConfigError):
        recall_at_k(img, img, 0)
    with pytest.raises(ConfigError):
        recall_at_k(img, img, 1, "sideways")
    with pytest.raises(DegenerateInputError):
        recall_at_k(img * 2.0, img, 1)
    with pytest.raises(ConfigError):
        zero_shot_classify(img, unit_rows(rng, 2, 3), [0, 1, 2, 0])
    with pytest.raises(DegenerateInputError):
        zero_shot_classify(np.zeros((0, 3)), unit_rows(rng, 2, 3), [])


def test_recall_table_skips_k_above_n(rng):
    img = unit_rows(rng, 4, 3)
    table = recall_table(img, img, [1, 5, 10])
    assert set(table) == {"image_to_text", "text_to_image"}
    assert table["image_to_text"] == {1: 1.0}


def test_modality_gap_is_centroid_distance():
    img = np.array([[1.0, 0.0], [0.0, 1.0]])
    txt = np.array([[-1.0, 0.0], [0.0, -1.0]])
    assert modality_gap(img, txt) == pytest.approx(np.sqrt(2.0))
    assert modality_gap(img, img) == 0.0


# -------------------------------------------------------------------------------------------------
# prompt ensembles
# -------------------------------------------------------------------------------------------------

class TableEmbedder:
    def __init__(self, table: dict[str, np.ndarray]):
        self.table = table
        self.calls: list[list[str]] = []

    def embed_captions(self, captions):
        self.calls.append(list(captions))
        return np.stack([self.table[c] for c in captions])


def test_class_embeddings_average_and_renormalise_templates():
    e = TableEmbedder(
        {
            "a x": np.array([1.0, 0.0]),
            "the x": np.array([0.0, 1.0]),
            "a y": np.array([-1.0, 0.0]),
            "the y": np.array([-1.0, 0.0]),
        }
    )
    cls = class_text_embeddings(["x", "y"], ["a {}", "the {}", "a {}"], e)
    np.testing.assert_allclose(cls[0], [np.sqrt(0.5), np.sqrt(0.5)])
    np.testing.assert_allclose(cls[1], [-1.0, 0.0])
    assert e.calls == [["a x", "the x", "a y", "the y"]]


def test_templates_must_have_one_slot():
    with pytest.raises(ConfigError):
        fill_templates(["x"], [])
    with pytest.raises(ConfigError):
        fill_templates(["x"], ["no slot"])


def test_opposite_ensemble_is_degenerate():
    e = TableEmbedder({"a x": np.array([1.0, 0.0]), "b x": np.array([-1.0, 0.0])})
    with pytest.raises(DegenerateInputError):
        class_text_embeddings(["x"], ["a {}", "b {}"], e)


def test_prompt_similarity_splits_within_and_cross_class():
    e = TableEmbedder(
        {
            "a x": np.array([1.0, 0.0]),
            "b x": np.array([1.0, 0.0]),
            "a y": np.array([0.0, 1.0]),
            "b y": np.array([0.0, 1.0]),
        }
    )
    sims = prompt_similarity(["x", "y"], ["a {}", "b {}"], e)
    assert sims == {"within_class": 1.0, "cross_class": 0.0}


# -------------------------------------------------------------------------------------------------
# reports
# -------------------------------------------------------------------------------------------------

def test_evaluate_report_fields(tiny_cfg, tiny_corpus, text_tower):
    vision = init_vision_weights(tiny_cfg.vision, seed=0)
    report = evaluate(vision, tiny_cfg.vision, text_tower, tiny_corpus, tiny_cfg.eval_templates)
    n = len(tiny_corpus.split("test"))
    assert report.meta["n"] == n
    assert report.meta["chance"] == 1.0 / 16
    assert report.meta["text_checksum"] == text_tower.checksum()
    assert 0.0 <= report.zero_shot_top1 <= 1.0
    assert report.mean_recall_at_1 == 0.5 * (
        report.recall["image_to_text"][1] + report.recall["text_to_image"][1]
    )
    assert all(k <= n for k in report.recall["image_to_text"])
    assert len(report.per_class) == 16
    assert set(report.text_sanity) == {"within_class", "cross_class"}
    assert set(report.csv_row()) == set(CSV_FIELDS)


def test_evaluate_rejects_a_split_with_one_sample(tiny_cfg, tiny_corpus, text_tower):
    keep = [s for s in tiny_corpus.samples if s.split != "test"] + tiny_corpus.split("test")[:1]
    corpus = Corpus(samples=keep, config=tiny_corpus.config, vocab=tiny_corpus.vocab)
    vision = init_vision_weights(tiny_cfg.vision, seed=0)
    with pytest.raises(DegenerateInputError):
        evaluate(vision, tiny_cfg.vision, text_tower, corpus, tiny_cfg.eval_templates)


def test_run_eval_writes_json_and_csv(tmp_path: Path, tiny_cfg, tiny_corpus, text_tower):
    cfg = tiny_cfg.with_train(total_steps=2, warmup_steps=1, checkpoint_every=2)
    result = train(tiny_corpus, text_tower, make_ctx(tmp_path / "run", cfg))
    ctx = make_ctx(tmp_path / "eval", cfg)
    report = run_eval(result.last_checkpoint, tiny_corpus, ctx)
    run_eval(result.last_checkpoint, tiny_corpus, ctx, templates=["a photo of a {}"])

    saved = json.loads((ctx.out_dir / REPORT_FILE).read_text(encoding="utf-8"))
    assert saved["meta"]["templates"] == ["a photo of a {}"]
    assert saved["meta"]["step"] == 2
    lines = (ctx.out_dir / RESULTS_FILE).read_text(encoding="utf-8").splitlines()
    assert lines[0].split(",") == list(CSV_FIELDS)
    assert len(lines) == 3
    assert report.meta["templates"] == cfg.eval_templates
