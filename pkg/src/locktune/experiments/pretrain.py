"""Manufactures the "pretrained" towers the main recipe starts from: a text
tower trained contrastively on caption paraphrases, and a ViT backbone
trained as a supervised classifier."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from ..app_context import RunContext
from ..contrastive.loss import LogitScale, contrastive_step_loss
from ..data.batching import BatchBuilder, batch_iter, batches_per_epoch
from ..data.corpus import Corpus
from ..encoders.blocks import init_linear
from ..encoders.text import TextTower, init_text_weights, text_forward
from ..encoders.vision import image_features, init_vision_weights
from ..encoders.weights import TowerWeights
from ..data.tokenizer import tokenize_batch
from ..errors import ConfigError
from ..eval.metrics import prompt_similarity
from ..tensor import Tensor, backward, no_grad, ops
from ..trainer.checkpoint import save_text_tower, save_vision_backbone
from ..trainer.optim import AdamWState, adamw_step, param_groups
from ..trainer.schedule import lr_at

HEAD = "vision.head"


@dataclass
class PretrainResult:
    out_dir: Path
    final_loss: float
    metrics: dict[str, Any] = field(default_factory=dict)


def paraphrase_batch(
    class_names: list[str], templates: list[str], batch_size: int, rng: np.random.Generator
) -> tuple[list[str], list[str]]:
    """Distinct classes per batch, each rendered with two different templates."""
    b = min(batch_size, len(class_names))
    classes = rng.choice(len(class_names), size=b, replace=False)
    anchors: list[str] = []
    positives: list[str] = []
    for c in classes:
        if len(templates) >= 2:
            i, j = rng.choice(len(templates), size=2, replace=False)
        else:
            i = j = 0
        anchors.append(templates[int(i)].format(class_names[int(c)]))
        positives.append(templates[int(j)].format(class_names[int(c)]))
    return anchors, positives


def pretrain_text(corpus: Corpus, ctx: RunContext) -> tuple[TextTower, PretrainResult]:
    """Contrastive caption/paraphrase training of a fresh text tower, which is
    then flagged pretrained, frozen and saved to ctx.out_dir."""
    cfg = ctx.config
    pc = cfg.pretrain_text
    tc = pc.as_train_config()
    text_cfg = replace(cfg.text, vocab_size=len(corpus.vocab), output_dim=cfg.vision.output_dim).validate()
    if len(corpus.class_names) < 2:
        raise ConfigError("text pretraining needs at least two classes")

    weights = init_text_weights(text_cfg, seed=pc.seed)
    scale = LogitScale.init(tc.logit_scale_init)
    params = param_groups([weights], tc, scale)
    opt = AdamWState()
    rng = np.random.default_rng([pc.seed, 11])
    templates = list(cfg.data.train_templates)
    ctx.emit("pretrain.start", {"tower": "text", "steps": pc.steps, "vocab_size": text_cfg.vocab_size})

    loss_v = float("nan")
    for step in range(1, pc.steps + 1):
        anchors, positives = paraphrase_batch(corpus.class_names, templates, pc.batch_size, rng)
        a_ids, a_mask = tokenize_batch(anchors, corpus.vocab, text_cfg.max_seq_len)
        p_ids, p_mask = tokenize_batch(positives, corpus.vocab, text_cfg.max_seq_len)
        loss = contrastive_step_loss(
            text_forward(a_ids, a_mask, weights, text_cfg),
            text_forward(p_ids, p_mask, weights, text_cfg),
            scale,
        )
        backward(loss)
        lr = lr_at(step, tc)
        adamw_step(params, opt, lr, tc)
        loss_v = loss.item()
        ctx.emit("pretrain.step", {"tower": "text", "step": step, "lr": lr, "loss": loss_v})

    weights.mark_pretrained().freeze()
    tower = TextTower(weights=weights, config=text_cfg, vocab=corpus.vocab)
    sims = prompt_similarity(corpus.class_names, cfg.eval_templates, tower)
    save_text_tower(tower, ctx.out_dir, {"final_loss": loss_v})
    metrics = {"final_loss": loss_v, **sims, "checksum": tower.checksum()}
    ctx.emit("pretrain.end", {"tower": "text", **metrics}, echo=True)
    return tower, PretrainResult(out_dir=ctx.out_dir, final_loss=loss_v, metrics=metrics)


def _classifier_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.eye(logits.shape[1])[labels]
    return ops.scale(ops.sum(ops.mul(ops.log_softmax(logits, axis=1), onehot)), -1.0 / logits.shape[0])


def classify(weights: TowerWeights, cfg, pixels: Tensor) -> Tensor:
    feats = image_features(pixels, weights, cfg)
    return ops.add(ops.matmul(feats, weights[f"{HEAD}.weight"]), weights[f"{HEAD}.bias"])


def pretrain_vision(corpus: Corpus, ctx: RunContext) -> tuple[TowerWeights, PretrainResult]:
    """Supervised class prediction on the train split. The linear head and the
    unused shared-space projection are dropped; every kept parameter is
    flagged pretrained."""
    cfg = ctx.config
    pc = cfg.pretrain_vision
    tc = pc.as_train_config()
    train_split = corpus.split("train")
    if batches_per_epoch(len(train_split), tc.batch_size) == 0:
        raise ConfigError(f"train split has {len(train_split)} samples, fewer than batch_size {tc.batch_size}")

    weights = init_vision_weights(cfg.vision, seed=pc.seed)
    rng = np.random.default_rng([pc.seed, 13])
    init_linear(weights, HEAD, cfg.vision.embed_dim, corpus.num_classes, rng, cfg.vision.init_std)
    trainable = weights.without("vision.proj")
    params = param_groups([trainable], tc)
    opt = AdamWState()
    builder = BatchBuilder(
        vocab=corpus.vocab,
        image_size=cfg.vision.image_size,
        max_seq_len=cfg.text.max_seq_len,
        crop_scale=cfg.data.crop_scale,
    )
    ctx.emit("pretrain.start", {"tower": "vision", "steps": pc.steps, "train_samples": len(train_split)})

    step = 0
    loss_v = float("nan")
    epoch = 0
    while step < pc.steps:
        for ib, _ in batch_iter(train_split, tc.batch_size, pc.seed, epoch, builder, train_mode=True, rng=rng):
            loss = _classifier_loss(classify(weights, cfg.vision, ib.pixels), ib.class_ids)
            backward(loss)
            step += 1
            lr = lr_at(step, tc)
            adamw_step(params, opt, lr, tc)
            loss_v = loss.item()
            ctx.emit("pretrain.step", {"tower": "vision", "step": step, "lr": lr, "loss": loss_v})
            if step >= pc.steps:
                break
        epoch += 1

    with no_grad():
        correct = 0
        for i in range(0, len(train_split), 128):
            chunk = train_split[i : i + 128]
            ib = builder.images(chunk)
            correct += int(np.sum(np.argmax(classify(weights, cfg.vision, ib.pixels).data, axis=1) == ib.class_ids))
    train_acc = correct / len(train_split)

    backbone = weights.without(HEAD).without("vision.proj").copy().mark_pretrained()
    save_vision_backbone(backbone, cfg.vision, ctx.out_dir, {"train_accuracy": train_acc})
    metrics = {"final_loss": loss_v, "train_accuracy": train_acc, "saved_params": len(backbone)}
    ctx.emit("pretrain.end", {"tower": "vision", **metrics}, echo=True)
    return backbone, PretrainResult(out_dir=ctx.out_dir, final_loss=loss_v, metrics=metrics)
