"""Checkpoint directories.

A training checkpoint holds vision.lockt, text.lockt, vocab.txt,
text_encoder.json, moments.lockt, state.json and configs.json. A text-tower
directory (the output of text pretraining) is the text.lockt, vocab.txt and
text_encoder.json subset, so any training checkpoint is also a text tower.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..config.models import EncoderConfig, LabConfig
from ..contrastive.loss import LogitScale
from ..data.tokenizer import Vocab
from ..encoders.archive import load_weights, save_weights
from ..encoders.text import TextTower
from ..encoders.weights import TowerWeights
from ..errors import CheckpointError
from ..util.fs import ensure_dir, read_json, write_json_atomic
from .state import TrainState

VISION_FILE = "vision.lockt"
TEXT_FILE = "text.lockt"
VOCAB_FILE = "vocab.txt"
TEXT_CONFIG_FILE = "text_encoder.json"
VISION_CONFIG_FILE = "vision_encoder.json"
CONFIGS_FILE = "configs.json"


def save_text_tower(tower: TextTower, out_dir: Path, meta: dict | None = None) -> Path:
    ensure_dir(out_dir)
    save_weights(out_dir / TEXT_FILE, tower.weights, {"kind": "text", **(meta or {})})
    tower.vocab.save(out_dir / VOCAB_FILE)
    write_json_atomic(out_dir / TEXT_CONFIG_FILE, tower.config.to_dict())
    return out_dir


def load_text_tower(path: Path, *, frozen: bool = True) -> TextTower:
    if not (path / TEXT_FILE).is_file():
        raise CheckpointError(f"{path} holds no text tower ({TEXT_FILE} missing); run `locktune pretrain-text` first")
    try:
        cfg = EncoderConfig.from_obj(read_json(path / TEXT_CONFIG_FILE))
    except Exception as e:
        raise CheckpointError(f"{path / TEXT_CONFIG_FILE}: {e}") from e
    weights, _ = load_weights(path / TEXT_FILE, requires_grad=not frozen)
    vocab = Vocab.load(path / VOCAB_FILE)
    if len(vocab) != cfg.vocab_size:
        raise CheckpointError(f"{path}: vocab has {len(vocab)} tokens but the text encoder expects {cfg.vocab_size}")
    return TextTower(weights=weights, config=cfg, vocab=vocab)


def save_vision_backbone(weights: TowerWeights, cfg: EncoderConfig, out_dir: Path, meta: dict | None = None) -> Path:
    ensure_dir(out_dir)
    save_weights(out_dir / VISION_FILE, weights, {"kind": "vision", **(meta or {})})
    write_json_atomic(out_dir / VISION_CONFIG_FILE, cfg.to_dict())
    return out_dir


def load_vision_backbone(path: Path) -> TowerWeights:
    file = path / VISION_FILE if path.is_dir() else path
    if not file.is_file():
        raise CheckpointError(f"no vision weights at {file}")
    weights, _ = load_weights(file)
    return weights


@dataclass
class Checkpoint:
    path: Path
    config: LabConfig
    vision: TowerWeights
    text: TextTower
    state: TrainState

    @property
    def logit_scale(self) -> LogitScale:
        return LogitScale.init(self.state.logit_scale, trainable=False)


def save_checkpoint(
    ckpt_dir: Path,
    cfg: LabConfig,
    vision: TowerWeights,
    text: TextTower,
    state: TrainState,
) -> Path:
    ensure_dir(ckpt_dir)
    meta = {"config_hash": state.config_hash, "step": state.step}
    save_weights(ckpt_dir / VISION_FILE, vision, {"kind": "vision", **meta})
    save_text_tower(text, ckpt_dir, meta)
    state.save(ckpt_dir)
    write_json_atomic(ckpt_dir / CONFIGS_FILE, cfg.to_dict())
    return ckpt_dir


def load_checkpoint(ckpt_dir: Path, *, trainable: bool = False) -> Checkpoint:
    if not (ckpt_dir / CONFIGS_FILE).is_file():
        raise CheckpointError(f"{ckpt_dir} is not a training checkpoint ({CONFIGS_FILE} missing)")
    try:
        cfg = LabConfig.from_obj(json.loads((ckpt_dir / CONFIGS_FILE).read_text(encoding="utf-8")))
    except Exception as e:
        raise CheckpointError(f"{ckpt_dir / CONFIGS_FILE}: {e}") from e
    vision, meta = load_weights(ckpt_dir / VISION_FILE, requires_grad=trainable)
    state = TrainState.load(ckpt_dir)
    if meta.get("config_hash") not in (None, state.config_hash):
        raise CheckpointError(f"{ckpt_dir}: vision weights and train state come from different configs")
    text = load_text_tower(ckpt_dir, frozen=not trainable or cfg.train.freeze_text)
    return Checkpoint(path=ckpt_dir, config=cfg, vision=vision, text=text, state=state)
