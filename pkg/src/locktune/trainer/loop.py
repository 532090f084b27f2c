from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..app_context import RunContext
from ..config.models import LabConfig, check_unified
from ..contrastive.loss import LogitScale, contrastive_step_loss
from ..data.batching import BatchBuilder, batch_iter, batches_per_epoch, count_caption_collisions
from ..data.corpus import Corpus, SyntheticSample
from ..encoders.text import TextTower, text_forward
from ..encoders.vision import embed_image, init_vision_weights
from ..encoders.weights import TowerWeights
from ..errors import CheckpointError, ConfigError, DivergenceError, LockTuneError
from ..tensor import Tensor, backward, no_grad
from ..util.fs import append_line, write_json_atomic, write_text_atomic
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamWState, adamw_step, param_groups
from .schedule import lr_at
from .state import TrainState, new_rng, rng_from_state

METRICS_FILE = "metrics.csv"
METRICS_HEADER = "step,lr,loss,logit_scale,collisions,text_checksum"
CHECKPOINTS_DIR = "checkpoints"


@dataclass
class TrainResult:
    out_dir: Path
    steps: int
    final_loss: float
    logit_scale: float
    text_checksum_before: str
    text_checksum_after: str
    best_val_loss: float | None
    interrupted: bool
    vision: TowerWeights
    optimizer_params: list[str] = field(default_factory=list)

    @property
    def last_checkpoint(self) -> Path:
        return self.out_dir / CHECKPOINTS_DIR / "last"

    @property
    def best_checkpoint(self) -> Path:
        return self.out_dir / CHECKPOINTS_DIR / "best"

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / METRICS_FILE


class CaptionTable:
    """Frozen-tower embeddings of a fixed caption set, rows in sorted order."""

    def __init__(self, tower: TextTower, captions: Sequence[str]):
        self.captions = sorted(set(captions))
        self.index = {c: i for i, c in enumerate(self.captions)}
        self.table = tower.embed_captions(self.captions)

    def lookup(self, captions: Sequence[str]) -> Tensor:
        try:
            rows = [self.index[c] for c in captions]
        except KeyError as e:
            raise LockTuneError(f"caption {e} was not embedded up front") from None
        return Tensor(self.table[rows])


def _read_metrics(path: Path) -> list[str]:
    if not path.is_file():
        return []
    return [ln for ln in path.read_text(encoding="utf-8").splitlines()[1:] if ln.strip()]


def _reset_metrics(path: Path, keep_through: int) -> None:
    rows = [r for r in _read_metrics(path) if int(r.split(",", 1)[0]) <= keep_through]
    write_text_atomic(path, "\n".join([METRICS_HEADER, *rows]) + "\n")


def validation_loss(
    samples: Sequence[SyntheticSample],
    builder: BatchBuilder,
    vision: TowerWeights,
    cfg: LabConfig,
    text: TextTower,
    logit_scale: LogitScale,
    batch_size: int,
    max_batches: int,
) -> float | None:
    """Mean contrastive loss on fixed eval-mode batches; None if the split is too small."""
    bs = min(batch_size, len(samples))
    if bs < 2 or max_batches < 1:
        return None
    losses: list[float] = []
    with no_grad():
        for i, (ib, tb) in enumerate(batch_iter(samples, bs, cfg.train.seed, 0, builder)):
            if i >= max_batches:
                break
            img = embed_image(ib.pixels, vision, cfg.vision)
            txt = Tensor(text.embed_captions(tb.captions))
            losses.append(contrastive_step_loss(img, txt, logit_scale).item())
    return float(np.mean(losses)) if losses else None


def train(
    corpus: Corpus,
    text: TextTower,
    ctx: RunContext,
    *,
    vision_init: TowerWeights | None = None,
    resume: bool = False,
    stop_after: int | None = None,
) -> TrainResult:
    """Locked Text Tuning: train the vision tower and logit scale against the
    text tower (frozen unless freeze_text is off)."""
    cfg = ctx.config
    tc = cfg.train
    check_unified(cfg.vision, text.config)
    train_split = corpus.split("train")
    n_batches = batches_per_epoch(len(train_split), tc.batch_size)
    if n_batches == 0:
        raise ConfigError(f"train split has {len(train_split)} samples, fewer than batch_size {tc.batch_size}")

    out_dir = ctx.out_dir
    ckpt_root = out_dir / CHECKPOINTS_DIR
    metrics = out_dir / METRICS_FILE
    digest = cfg.digest()

    if tc.freeze_text:
        text.weights.freeze()
    else:
        text.weights.unfreeze()
    text_before = text.checksum()

    if resume and (ckpt_root / "last").is_dir():
        ck = load_checkpoint(ckpt_root / "last", trainable=True)
        if ck.state.config_hash != digest:
            raise CheckpointError(
                f"cannot resume: checkpoint config {ck.state.config_hash[:12]} differs from current {digest[:12]}"
            )
        if tc.freeze_text and ck.state.text_checksum != text_before:
            raise CheckpointError("cannot resume: the frozen text tower differs from the one the run started with")
        vision = ck.vision
        if not tc.freeze_text:
            text.weights.overlay(ck.text.weights)
            text_before = ck.state.text_checksum
        state = ck.state
        rng = rng_from_state(state.rng_state)
        _reset_metrics(metrics, state.step)
        ctx.emit("train.resume", {"step": state.step, "checkpoint": str(ck.path)}, echo=True)
    else:
        vision = init_vision_weights(cfg.vision, seed=tc.seed)
        if vision_init is not None:
            loaded = vision.overlay(vision_init)
            if not loaded:
                raise CheckpointError("pretrained vision weights share no parameter with this architecture")
        rng = new_rng(tc.seed)
        state = TrainState(
            step=0,
            logit_scale=tc.logit_scale_init,
            rng_state=rng.bit_generator.state,
            config_hash=digest,
            text_checksum=text_before,
        )
        write_text_atomic(metrics, METRICS_HEADER + "\n")

    logit_scale = LogitScale.init(state.logit_scale)
    towers = [vision] if tc.freeze_text else [vision, text.weights]
    params = param_groups(towers, tc, logit_scale)
    opt: AdamWState = state.optimizer

    builder = BatchBuilder(
        vocab=text.vocab,
        image_size=cfg.vision.image_size,
        max_seq_len=text.config.max_seq_len,
        crop_scale=cfg.data.crop_scale,
    )
    table = CaptionTable(text, [s.caption for s in train_split]) if tc.freeze_text else None
    val_split = corpus.split("val")
    threshold = 2.0 * math.log(tc.batch_size)

    ctx.emit(
        "train.start",
        {
            "config_hash": digest,
            "start_step": state.step,
            "total_steps": tc.total_steps,
            "batch_size": tc.batch_size,
            "train_samples": len(train_split),
            "trainable_params": sum(t.size for t in params.tensors.values()),
            "freeze_text": tc.freeze_text,
            "text_checksum": text_before,
        },
    )

    def checkpoint(tag_best: bool) -> None:
        state.logit_scale = logit_scale.value
        state.rng_state = rng.bit_generator.state
        state.optimizer = opt
        if tag_best:
            val = validation_loss(
                val_split, builder, vision, cfg, text, logit_scale, tc.batch_size, tc.val_batches
            )
            if val is not None and (state.best_val_loss is None or val < state.best_val_loss):
                state.best_val_loss = val
                state.best_step = state.step
                save_checkpoint(ckpt_root / "best", cfg, vision, text, state)
            ctx.emit(
                "train.checkpoint",
                {"step": state.step, "val_loss": val, "best_step": state.best_step},
                echo=True,
            )
        save_checkpoint(ckpt_root / "last", cfg, vision, text, state)

    last_loss = float("nan")
    recent: list[float] = []
    interrupted = False
    while state.step < tc.total_steps and not interrupted:
        epoch, start = divmod(state.step, n_batches)
        for ib, tb in batch_iter(
            train_split, tc.batch_size, tc.seed, epoch, builder, train_mode=True, rng=rng, start=start
        ):
            img = embed_image(ib.pixels, vision, cfg.vision)
            if table is not None:
                txt = table.lookup(tb.captions)
            else:
                txt = text_forward(tb.token_ids, tb.mask, text.weights, text.config)
            scale_used = logit_scale.value
            loss = contrastive_step_loss(img, txt, logit_scale)
            backward(loss)
            lr = lr_at(state.step + 1, tc)
            adamw_step(params, opt, lr, tc)
            state.step += 1
            last_loss = loss.item()
            # identical captions in one batch are false negatives; counted, not deduplicated
            collisions = count_caption_collisions(tb.captions)

            checksum = text.checksum()
            append_line(metrics, f"{state.step},{lr!r},{last_loss!r},{scale_used!r},{collisions},{checksum[:16]}")
            ctx.emit(
                "train.step",
                {"step": state.step, "lr": lr, "loss": last_loss, "logit_scale": scale_used, "collisions": collisions},
            )

            recent = (recent + [last_loss])[-10:]
            state.diverge_streak = state.diverge_streak + 1 if last_loss > threshold else 0
            if state.diverge_streak >= tc.divergence_window:
                report = {
                    "step": state.step,
                    "threshold": threshold,
                    "window": tc.divergence_window,
                    "recent_losses": recent,
                    "logit_scale": logit_scale.value,
                    "lr": lr,
                }
                write_json_atomic(out_dir / "divergence.json", report)
                ctx.emit("train.diverged", report, echo=True)
                raise DivergenceError(
                    f"loss stayed above 2 ln B = {threshold:.4f} for {tc.divergence_window} steps (step {state.step})",
                    report,
                )

            if state.step % tc.checkpoint_every == 0 or state.step == tc.total_steps:
                checkpoint(tag_best=True)
            if stop_after is not None and state.step >= stop_after and state.step < tc.total_steps:
                if state.step % tc.checkpoint_every != 0:
                    checkpoint(tag_best=False)
                interrupted = True
                break
            if state.step >= tc.total_steps:
                break

    text_after = text.checksum()
    if tc.freeze_text and text_after != text_before:
        raise LockTuneError(f"frozen text tower changed during training ({text_before[:12]} -> {text_after[:12]})")

    ctx.emit(
        "train.end",
        {
            "step": state.step,
            "final_loss": last_loss,
            "logit_scale": logit_scale.value,
            "best_val_loss": state.best_val_loss,
            "interrupted": interrupted,
            "text_checksum": text_after,
        },
        echo=True,
    )
    return TrainResult(
        out_dir=out_dir,
        steps=state.step,
        final_loss=last_loss,
        logit_scale=logit_scale.value,
        text_checksum_before=text_before,
        text_checksum_after=text_after,
        best_val_loss=state.best_val_loss,
        interrupted=interrupted,
        vision=vision,
        optimizer_params=params.names(),
    )
