from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal

from ..errors import ConfigError

Pooling = Literal["cls_token", "mean", "map"]
POOLING_STRATEGIES: tuple[str, ...] = ("cls_token", "mean", "map")

DEFAULT_LOGIT_SCALE_INIT = math.log(1.0 / 0.07)

DEFAULT_COLORS = ["red", "green", "blue", "yellow"]
DEFAULT_SHAPES = ["circle", "square", "triangle", "cross"]
DEFAULT_TRAIN_TEMPLATES = [
    "a photo of a {}",
    "a picture of a {}",
    "a rendering of a {}",
    "a {} on a textured background",
]
# Two phrasings never used for training captions or text pretraining.
DEFAULT_EVAL_TEMPLATES = [
    "a photo of a {}",
    "a rendering of a {}",
    "an image containing a {} object",
    "a drawing of the {}",
]


def _pick(obj: dict[str, Any], key: str, kind: type | tuple[type, ...], default: Any) -> Any:
    v = obj.get(key, default)
    if v is default:
        return v
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        return float(v)
    if isinstance(v, bool) and kind is not bool:
        raise ConfigError(f"{key}: expected {kind}, got bool")
    if not isinstance(v, kind):
        raise ConfigError(f"{key}: expected {kind}, got {type(v).__name__} ({v!r})")
    return v


def _str_list(obj: dict[str, Any], key: str, default: list[str]) -> list[str]:
    v = obj.get(key, default)
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise ConfigError(f"{key}: expected a list of strings")
    return list(v)


def _float_pair(obj: dict[str, Any], key: str, default: tuple[float, float]) -> tuple[float, float]:
    v = obj.get(key, default)
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{key}: expected a pair of numbers")
    return float(v[0]), float(v[1])


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of one tower. Text-only fields are ignored by the vision
    tower and vice versa."""

    image_size: int = 32
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    num_heads: int = 4
    mlp_ratio: float = 4.0
    pooling: str = "map"
    output_dim: int = 64
    vocab_size: int = 0
    max_seq_len: int = 12
    in_channels: int = 3
    ln_eps: float = 1e-6
    init_std: float = 0.02

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def mlp_dim(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    def validate(self) -> "EncoderConfig":
        if self.patch_size <= 0 or self.image_size % self.patch_size != 0:
            raise ConfigError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.num_heads <= 0 or self.embed_dim % self.num_heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.pooling not in POOLING_STRATEGIES:
            raise ConfigError(f"pooling must be one of {POOLING_STRATEGIES}, got {self.pooling!r}")
        if self.depth < 0 or self.output_dim <= 0 or self.max_seq_len < 3:
            raise ConfigError("depth >= 0, output_dim > 0 and max_seq_len >= 3 are required")
        return self

    @staticmethod
    def from_obj(obj: Any, base: "EncoderConfig | None" = None) -> "EncoderConfig":
        base = base or EncoderConfig()
        if obj is None:
            return base
        if not isinstance(obj, dict):
            raise ConfigError("encoder config must be a mapping")
        kw: dict[str, Any] = {}
        for f in fields(EncoderConfig):
            if f.name in obj:
                kind = float if isinstance(getattr(base, f.name), float) else type(getattr(base, f.name))
                kw[f.name] = _pick(obj, f.name, kind, getattr(base, f.name))
        return replace(base, **kw).validate()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def check_unified(vision: EncoderConfig, text: EncoderConfig) -> None:
    if vision.output_dim != text.output_dim:
        raise ConfigError(
            f"towers must share output_dim (vision {vision.output_dim} vs text {text.output_dim})"
        )


@dataclass(frozen=True)
class DataConfig:
    n_samples: int = 2000
    seed: int = 0
    colors: list[str] = field(default_factory=lambda: list(DEFAULT_COLORS))
    shapes: list[str] = field(default_factory=lambda: list(DEFAULT_SHAPES))
    train_templates: list[str] = field(default_factory=lambda: list(DEFAULT_TRAIN_TEMPLATES))
    eval_templates: list[str] = field(default_factory=lambda: list(DEFAULT_EVAL_TEMPLATES))
    raster_size: int = 48
    crop_scale: tuple[float, float] = (0.9, 1.0)
    holdout_classes: list[int] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.colors) * len(self.shapes)

    def class_name(self, class_id: int) -> str:
        color = self.colors[class_id // len(self.shapes)]
        shape = self.shapes[class_id % len(self.shapes)]
        return f"{color} {shape}"

    def class_names(self) -> list[str]:
        return [self.class_name(c) for c in range(self.num_classes)]

    def validate(self) -> "DataConfig":
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not self.colors or not self.shapes:
            raise ConfigError("colors and shapes must be non-empty")
        for t in list(self.train_templates) + list(self.eval_templates):
            if t.count("{}") != 1:
                raise ConfigError(f"template must contain exactly one '{{}}' slot: {t!r}")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        bad = [c for c in self.holdout_classes if not (0 <= c < self.num_classes)]
        if bad:
            raise ConfigError(f"holdout_classes out of range: {bad}")
        return self

    @staticmethod
    def from_obj(obj: Any) -> "DataConfig":
        base = DataConfig()
        if obj is None:
            return base
        if not isinstance(obj, dict):
            raise ConfigError("data config must be a mapping")
        holdout = obj.get("holdout_classes", [])
        if not isinstance(holdout, list) or not all(isinstance(x, int) for x in holdout):
            raise ConfigError("holdout_classes: expected a list of ints")
        return DataConfig(
            n_samples=_pick(obj, "n_samples", int, base.n_samples),
            seed=_pick(obj, "seed", int, base.seed),
            colors=_str_list(obj, "colors", base.colors),
            shapes=_str_list(obj, "shapes", base.shapes),
            train_templates=_str_list(obj, "train_templates", base.train_templates),
            eval_templates=_str_list(obj, "eval_templates", base.eval_templates),
            raster_size=_pick(obj, "raster_size", int, base.raster_size),
            crop_scale=_float_pair(obj, "crop_scale", base.crop_scale),
            holdout_classes=list(holdout),
        ).validate()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["crop_scale"] = list(self.crop_scale)
        return d


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 1e-3
    warmup_steps: int = 100
    total_steps: int = 2000
    batch_size: int = 64
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    freeze_text: bool = True
    seed: int = 0
    logit_scale_init: float = DEFAULT_LOGIT_SCALE_INIT
    checkpoint_every: int = 200
    val_batches: int = 4
    divergence_window: int = 100

    def validate(self) -> "TrainConfig":
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be > 0, got {self.peak_lr}")
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise ConfigError(f"need 0 <= warmup_steps <= total_steps, got {self.warmup_steps} / {self.total_steps}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 (InfoNCE needs negatives), got {self.batch_size}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        return self

    @staticmethod
    def from_obj(obj: Any, base: "TrainConfig | None" = None) -> "TrainConfig":
        base = base or TrainConfig()
        if obj is None:
            return base
        if not isinstance(obj, dict):
            raise ConfigError("train config must be a mapping")
        kw: dict[str, Any] = {}
        for f in fields(TrainConfig):
            if f.name not in obj:
                continue
            if f.name == "betas":
                kw["betas"] = _float_pair(obj, "betas", base.betas)
            else:
                cur = getattr(base, f.name)
                kind = float if isinstance(cur, float) else type(cur)
                kw[f.name] = _pick(obj, f.name, kind, cur)
        return replace(base, **kw).validate()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 300
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup_steps: int = 20
    weight_decay: float = 0.0
    seed: int = 0

    def as_train_config(self) -> TrainConfig:
        return TrainConfig(
            peak_lr=self.peak_lr,
            warmup_steps=self.warmup_steps,
            total_steps=self.steps,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            seed=self.seed,
        ).validate()

    @staticmethod
    def from_obj(obj: Any, base: "PretrainConfig | None" = None) -> "PretrainConfig":
        base = base or PretrainConfig()
        if obj is None:
            return base
        if not isinstance(obj, dict):
            raise ConfigError("pretrain config must be a mapping")
        kw: dict[str, Any] = {}
        for f in fields(PretrainConfig):
            if f.name in obj:
                cur = getattr(base, f.name)
                kw[f.name] = _pick(obj, f.name, float if isinstance(cur, float) else type(cur), cur)
        out = replace(base, **kw)
        out.as_train_config()
        return out

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class EvalConfig:
    templates: list[str] | None = None
    recall_ks: tuple[int, ...] = (1, 5, 10)

    @staticmethod
    def from_obj(obj: Any) -> "EvalConfig":
        if obj is None:
            return EvalConfig()
        if not isinstance(obj, dict):
            raise ConfigError("eval config must be a mapping")
        templates = obj.get("templates")
        if templates is not None and (
            not isinstance(templates, list) or not all(isinstance(t, str) for t in templates)
        ):
            raise ConfigError("eval.templates: expected a list of strings")
        ks = obj.get("recall_ks", [1, 5, 10])
        if not isinstance(ks, list) or not all(isinstance(k, int) and k >= 1 for k in ks):
            raise ConfigError("eval.recall_ks: expected a list of positive ints")
        return EvalConfig(templates=templates, recall_ks=tuple(sorted(set(ks))))

    def to_dict(self) -> dict[str, Any]:
        return {"templates": self.templates, "recall_ks": list(self.recall_ks)}


def _default_text_encoder() -> EncoderConfig:
    return EncoderConfig(pooling="mean")


@dataclass(frozen=True)
class LabConfig:
    """Everything a run needs. `digest()` identifies it in checkpoints."""

    data: DataConfig = field(default_factory=DataConfig)
    vision: EncoderConfig = field(default_factory=EncoderConfig)
    text: EncoderConfig = field(default_factory=_default_text_encoder)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain_text: PretrainConfig = field(default_factory=PretrainConfig)
    pretrain_vision: PretrainConfig = field(default_factory=lambda: PretrainConfig(batch_size=64))
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def eval_templates(self) -> list[str]:
        return list(self.eval.templates or self.data.eval_templates)

    @staticmethod
    def from_obj(obj: Any) -> "LabConfig":
        if obj is None:
            obj = {}
        if not isinstance(obj, dict):
            raise ConfigError("config root must be a mapping")
        base = LabConfig()
        cfg = LabConfig(
            data=DataConfig.from_obj(obj.get("data")),
            vision=EncoderConfig.from_obj(obj.get("vision"), base.vision),
            text=EncoderConfig.from_obj(obj.get("text"), base.text),
            train=TrainConfig.from_obj(obj.get("train")),
            pretrain_text=PretrainConfig.from_obj(obj.get("pretrain_text"), base.pretrain_text),
            pretrain_vision=PretrainConfig.from_obj(obj.get("pretrain_vision"), base.pretrain_vision),
            eval=EvalConfig.from_obj(obj.get("eval")),
        )
        check_unified(cfg.vision, cfg.text)
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return {
            "data": self.data.to_dict(),
            "vision": self.vision.to_dict(),
            "text": self.text.to_dict(),
            "train": self.train.to_dict(),
            "pretrain_text": self.pretrain_text.to_dict(),
            "pretrain_vision": self.pretrain_vision.to_dict(),
            "eval": self.eval.to_dict(),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_train(self, **changes: Any) -> "LabConfig":
        return replace(self, train=replace(self.train, **changes).validate())

    def with_vision(self, **changes: Any) -> "LabConfig":
        return replace(self, vision=replace(self.vision, **changes).validate())


ExperimentKind = Literal[
    "batch_sweep",
    "pooling_compare",
    "backbone_compare",
    "hparam_grid",
    "pretrain_text",
    "pretrain_vision",
    "train",
    "eval",
]


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    base: LabConfig
    out_dir: Path
    values: list[Any] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    samples_seen: int | None = None
    workers: int = 1
    # second grid axis for hparam_grid (weight decay); `values` hold learning rates
    values_b: list[float] = field(default_factory=list)
    corpus_dir: Path | None = None
    text_dir: Path | None = None
    vision_dir: Path | None = None

    def validate(self) -> "ExperimentSpec":
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        numeric = [v for v in self.values if isinstance(v, (int, float))]
        if len(numeric) == len(self.values) and numeric != sorted(numeric):
            raise ConfigError(f"sweep values must be sorted ascending, got {self.values}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    @property
    def supports_trend_claims(self) -> bool:
        return len(self.seeds) >= 2
