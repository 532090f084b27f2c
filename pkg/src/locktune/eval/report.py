from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..app_context import RunContext
from ..config.models import EncoderConfig, check_unified
from ..data.batching import BatchBuilder
from ..data.corpus import Corpus, SyntheticSample
from ..encoders.text import TextTower
from ..encoders.vision import embed_image
from ..encoders.weights import TowerWeights
from ..errors import CheckpointError, ConfigError, DegenerateInputError
from ..tensor import no_grad
from ..trainer.checkpoint import load_checkpoint
from ..util.csvlog import append_rows
from ..util.fs import write_json_atomic
from .metrics import (
    DIRECTIONS,
    check_unit_norm,
    class_text_embeddings,
    modality_gap,
    per_class_accuracy,
    prompt_similarity,
    recall_table,
    zero_shot_predict,
)

REPORT_FILE = "eval.json"
RESULTS_FILE = "eval.csv"
CSV_FIELDS = (
    "checkpoint",
    "step",
    "split",
    "n",
    "zero_shot_top1",
    "i2t_r1",
    "t2i_r1",
    "mean_recall_at_1",
    "i2t_r5",
    "t2i_r5",
    "modality_gap",
)


@dataclass
class EvalReport:
    zero_shot_top1: float
    recall: dict[str, dict[int, float]]
    mean_recall_at_1: float
    modality_gap: float
    per_class: list[dict[str, Any]] = field(default_factory=list)
    text_sanity: dict[str, float | None] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> "EvalReport":
        fractions = [self.zero_shot_top1, self.mean_recall_at_1]
        fractions += [v for d in self.recall.values() for v in d.values()]
        fractions += [c["accuracy"] for c in self.per_class if c.get("accuracy") is not None]
        if any(not 0.0 <= f <= 1.0 for f in fractions):
            raise DegenerateInputError("eval report holds a fraction outside [0, 1]")
        r1 = [self.recall.get(d, {}).get(1) for d in DIRECTIONS]
        if None not in r1 and abs(self.mean_recall_at_1 - 0.5 * (r1[0] + r1[1])) > 1e-12:
            raise DegenerateInputError("mean_recall_at_1 is not the mean of the directional R@1 values")
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "zero_shot_top1": self.zero_shot_top1,
            "recall": {d: {str(k): v for k, v in ks.items()} for d, ks in self.recall.items()},
            "mean_recall_at_1": self.mean_recall_at_1,
            "modality_gap": self.modality_gap,
            "per_class": self.per_class,
            "text_sanity": self.text_sanity,
            "meta": self.meta,
        }

    def csv_row(self) -> dict[str, Any]:
        i2t, t2i = self.recall.get("image_to_text", {}), self.recall.get("text_to_image", {})
        return {
            "checkpoint": self.meta.get("checkpoint", ""),
            "step": self.meta.get("step", ""),
            "split": self.meta.get("split", ""),
            "n": self.meta.get("n", ""),
            "zero_shot_top1": self.zero_shot_top1,
            "i2t_r1": i2t.get(1),
            "t2i_r1": t2i.get(1),
            "mean_recall_at_1": self.mean_recall_at_1,
            "i2t_r5": i2t.get(5),
            "t2i_r5": t2i.get(5),
            "modality_gap": self.modality_gap,
        }


def embed_samples(
    samples: Sequence[SyntheticSample],
    vision: TowerWeights,
    cfg: EncoderConfig,
    builder: BatchBuilder,
    chunk: int = 128,
) -> np.ndarray:
    out: list[np.ndarray] = []
    with no_grad():
        for i in range(0, len(samples), chunk):
            ib = builder.images(samples[i : i + chunk])
            out.append(embed_image(ib.pixels, vision, cfg).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, cfg.output_dim))


def evaluate(
    vision: TowerWeights,
    vision_cfg: EncoderConfig,
    text: TextTower,
    corpus: Corpus,
    templates: Sequence[str],
    *,
    split: str = "test",
    recall_ks: Sequence[int] = (1, 5, 10),
    meta: dict[str, Any] | None = None,
) -> EvalReport:
    """Zero-shot accuracy, paired retrieval and modality gap on one split."""
    try:
        check_unified(vision_cfg, text.config)
    except ConfigError as e:
        raise CheckpointError(f"vision/text towers do not share a space: {e}") from e
    samples = corpus.split(split)
    if len(samples) < 2:
        raise DegenerateInputError(f"split '{split}' has {len(samples)} samples; need at least 2")

    builder = BatchBuilder(vocab=text.vocab, image_size=vision_cfg.image_size, max_seq_len=text.config.max_seq_len)
    img = embed_samples(samples, vision, vision_cfg, builder)
    txt = text.embed_captions([s.caption for s in samples])
    check_unit_norm(img, "image embeddings")
    check_unit_norm(txt, "text embeddings")

    class_names = corpus.class_names
    cls = class_text_embeddings(class_names, templates, text)
    labels = np.array([s.class_id for s in samples], dtype=np.int64)
    preds = zero_shot_predict(img, cls)
    ks = sorted(set(recall_ks) | {1})
    recall = recall_table(img, txt, ks)

    info = {
        "split": split,
        "n": len(samples),
        "num_classes": len(class_names),
        "chance": 1.0 / len(class_names),
        "templates": list(dict.fromkeys(templates)),
        "text_checksum": text.checksum(),
        **(meta or {}),
    }
    return EvalReport(
        zero_shot_top1=float(np.mean(preds == labels)),
        recall=recall,
        mean_recall_at_1=0.5 * (recall["image_to_text"][1] + recall["text_to_image"][1]),
        modality_gap=modality_gap(img, txt),
        per_class=per_class_accuracy(preds, labels, class_names),
        text_sanity=prompt_similarity(class_names, templates, text),
        meta=info,
    ).validate()


def run_eval(
    checkpoint: Path,
    corpus: Corpus,
    ctx: RunContext,
    *,
    templates: Sequence[str] | None = None,
    split: str = "test",
) -> EvalReport:
    """Load a checkpoint, evaluate it and write eval.json plus a row of eval.csv."""
    ck = load_checkpoint(checkpoint)
    use = list(templates or ck.config.eval_templates)
    report = evaluate(
        ck.vision,
        ck.config.vision,
        ck.text,
        corpus,
        use,
        split=split,
        recall_ks=ctx.config.eval.recall_ks,
        meta={"checkpoint": str(checkpoint), "step": ck.state.step, "config_hash": ck.state.config_hash},
    )
    write_json_atomic(ctx.out_dir / REPORT_FILE, report.to_dict())
    append_rows(ctx.out_dir / RESULTS_FILE, CSV_FIELDS, [report.csv_row()])
    ctx.emit(
        "eval.report",
        {
            "checkpoint": str(checkpoint),
            "zero_shot_top1": report.zero_shot_top1,
            "mean_recall_at_1": report.mean_recall_at_1,
            "modality_gap": report.modality_gap,
        },
    )
    return report
