"""Sweep runners: one train + eval per (axis value, seed) cell.

Cells are independent. Each one reads the corpus and the frozen text tower
from disk, trains into its own directory and leaves a `cell.json`; a cell
whose `cell.json` exists is not run again. Results are appended to
`<kind>.csv` in cell-id order, new cell ids only.
"""
from __future__ import annotations

import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from rich.console import Console

from ..app_context import RunContext
from ..config.models import ExperimentSpec, LabConfig
from ..data.corpus import generate_corpus
from ..data.store import CAPTIONS_FILE, load_corpus, save_corpus
from ..errors import ConfigError
from ..eval.report import evaluate
from ..trainer.checkpoint import TEXT_FILE, VISION_FILE, load_text_tower, load_vision_backbone
from ..trainer.loop import train
from ..util.csvlog import append_rows, read_rows
from ..util.fs import read_json, write_json_atomic
from .pretrain import pretrain_text, pretrain_vision

CELL_FILE = "cell.json"
CELLS_DIR = "cells"
CORPUS_DIR = "corpus"
TEXT_DIR = "text_tower"
VISION_DIR = "vision_backbone"

RESULT_FIELDS = (
    "cell_id",
    "kind",
    "axis",
    "value",
    "value_b",
    "seed",
    "batch_size",
    "steps",
    "samples_seen",
    "zero_shot_top1",
    "mean_recall_at_1",
    "i2t_r1",
    "t2i_r1",
    "modality_gap",
    "final_loss",
    "logit_scale",
    "chance",
    "text_checksum",
)

POOLING_STRATEGIES = ["cls_token", "mean", "map"]
BACKBONES = ["random", "pretrained"]

_UNSAFE = re.compile(r"[^A-Za-z0-9_.=-]+")


@dataclass(frozen=True)
class CellSpec:
    """Everything one cell needs, as plain data so it pickles into a worker."""

    cell_id: str
    kind: str
    axis: str
    value: Any
    seed: int
    config: dict[str, Any]
    out_dir: str
    corpus_dir: str
    text_dir: str
    vision_dir: str | None = None
    value_b: Any = None

    @property
    def cell_dir(self) -> Path:
        return Path(self.out_dir) / CELLS_DIR / self.cell_id


@dataclass
class SweepResult:
    kind: str
    csv_path: Path
    rows: list[dict[str, Any]]
    ran: list[str] = field(default_factory=list)
    reused: list[str] = field(default_factory=list)


def cell_id(index: int, axis: str, value: Any, seed: int, value_b: Any = None, axis_b: str = "wd") -> str:
    parts = [f"{index:03d}", f"{axis}={value}"]
    if value_b is not None:
        parts.append(f"{axis_b}={value_b}")
    parts.append(f"seed={seed}")
    return _UNSAFE.sub("_", "-".join(parts))


def run_cell(cell: CellSpec) -> dict[str, Any]:
    """Train and evaluate one cell; returns its result row."""
    done = cell.cell_dir / CELL_FILE
    if done.is_file():
        return dict(read_json(done)["row"])

    cfg = LabConfig.from_obj(cell.config)
    ctx = RunContext.create(cell.cell_dir, cfg, console=Console(quiet=True))
    corpus = load_corpus(Path(cell.corpus_dir))
    text = load_text_tower(Path(cell.text_dir))
    vision_init = load_vision_backbone(Path(cell.vision_dir)) if cell.vision_dir else None

    result = train(corpus, text, ctx, vision_init=vision_init, resume=True)
    report = evaluate(
        result.vision,
        cfg.vision,
        text,
        corpus,
        cfg.eval_templates,
        split="test",
        recall_ks=cfg.eval.recall_ks,
        meta={"cell_id": cell.cell_id, "step": result.steps},
    )
    tc = cfg.train
    row = {
        "cell_id": cell.cell_id,
        "kind": cell.kind,
        "axis": cell.axis,
        "value": cell.value,
        "value_b": cell.value_b,
        "seed": cell.seed,
        "batch_size": tc.batch_size,
        "steps": result.steps,
        "samples_seen": result.steps * tc.batch_size,
        "zero_shot_top1": report.zero_shot_top1,
        "mean_recall_at_1": report.mean_recall_at_1,
        "i2t_r1": report.recall["image_to_text"][1],
        "t2i_r1": report.recall["text_to_image"][1],
        "modality_gap": report.modality_gap,
        "final_loss": result.final_loss,
        "logit_scale": result.logit_scale,
        "chance": 1.0 / corpus.num_classes,
        "text_checksum": result.text_checksum_after,
    }
    write_json_atomic(done, {"row": row, "eval": report.to_dict()})
    return row


# ---------------------------------------------------------
# shared inputs
# ---------------------------------------------------------
def prepare_inputs(spec: ExperimentSpec, ctx: RunContext, *, need_vision: bool = False) -> tuple[Path, Path, Path | None]:
    """Resolve corpus, text tower and (optionally) vision backbone dirs.

    Missing inputs are produced once under the sweep directory from the base
    config, so a sweep is reproducible from its ExperimentSpec and seeds alone.
    """
    base = spec.base
    corpus_dir = spec.corpus_dir or spec.out_dir / CORPUS_DIR
    if not (corpus_dir / CAPTIONS_FILE).is_file():
        if spec.corpus_dir is not None:
            load_corpus(corpus_dir)
        corpus = generate_corpus(base.data.n_samples, base.data)
        save_corpus(corpus, corpus_dir)
        ctx.emit("corpus.generated", {"path": str(corpus_dir), "n": len(corpus.samples), "digest": corpus.digest()})

    text_dir = spec.text_dir or spec.out_dir / TEXT_DIR
    if not (text_dir / TEXT_FILE).is_file():
        if spec.text_dir is not None:
            load_text_tower(text_dir)
        pretrain_text(load_corpus(corpus_dir), ctx.child(text_dir, base))

    vision_dir: Path | None = None
    if need_vision:
        vision_dir = spec.vision_dir or spec.out_dir / VISION_DIR
        if not (vision_dir / VISION_FILE).is_file():
            if spec.vision_dir is not None:
                load_vision_backbone(vision_dir)
            pretrain_vision(load_corpus(corpus_dir), ctx.child(vision_dir, base))
    return corpus_dir, text_dir, vision_dir


def _execute(cells: list[CellSpec], workers: int) -> list[dict[str, Any]]:
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]
    return sorted(rows, key=lambda r: r["cell_id"])


def run_sweep(spec: ExperimentSpec, ctx: RunContext, cells: list[CellSpec]) -> SweepResult:
    """Run the cells, then append every row whose cell id is not yet in the CSV."""
    if not cells:
        raise ConfigError(f"{spec.kind}: nothing to run (no values or seeds)")
    reused = [c.cell_id for c in cells if (c.cell_dir / CELL_FILE).is_file()]
    rows = _execute(cells, spec.workers)

    csv_path = spec.out_dir / f"{spec.kind}.csv"
    known = {r["cell_id"] for r in read_rows(csv_path)}
    append_rows(csv_path, RESULT_FIELDS, [r for r in rows if r["cell_id"] not in known])
    for r in rows:
        ctx.emit(
            "sweep.cell",
            {k: r[k] for k in ("cell_id", "value", "seed", "zero_shot_top1", "mean_recall_at_1", "final_loss")},
            echo=True,
        )
    return SweepResult(
        kind=spec.kind,
        csv_path=csv_path,
        rows=rows,
        ran=[c.cell_id for c in cells if c.cell_id not in reused],
        reused=reused,
    )


def _cells(
    spec: ExperimentSpec,
    axis: str,
    grid: Iterable[tuple[Any, Any, LabConfig]],
    corpus_dir: Path,
    text_dir: Path,
    vision_for: Callable[[Any], Path | None] = lambda _: None,
) -> list[CellSpec]:
    out: list[CellSpec] = []
    index = 0
    for value, value_b, cfg in grid:
        for seed in spec.seeds:
            out.append(
                CellSpec(
                    cell_id=cell_id(index, axis, value, seed, value_b),
                    kind=spec.kind,
                    axis=axis,
                    value=value,
                    value_b=value_b,
                    seed=int(seed),
                    config=cfg.with_train(seed=int(seed)).to_dict(),
                    out_dir=str(spec.out_dir),
                    corpus_dir=str(corpus_dir),
                    text_dir=str(text_dir),
                    vision_dir=None if vision_for(value) is None else str(vision_for(value)),
                )
            )
            index += 1
    return out


# ---------------------------------------------------------
# runners
# ---------------------------------------------------------
def batch_sweep_configs(spec: ExperimentSpec) -> list[LabConfig]:
    """Per-batch configs at a fixed number of samples seen (steps x batch).

    Warmup keeps the base config's fraction of the run.
    """
    tc = spec.base.train
    samples_seen = spec.samples_seen or tc.total_steps * tc.batch_size
    out: list[LabConfig] = []
    for b in spec.values:
        b = int(b)
        if b < 2:
            raise ConfigError(f"batch sweep: batch size {b} < 2")
        if samples_seen % b:
            raise ConfigError(f"batch sweep: samples_seen {samples_seen} is not divisible by batch size {b}")
        steps = samples_seen // b
        warmup = min(steps, round(tc.warmup_steps * steps / tc.total_steps))
        out.append(
            spec.base.with_train(
                batch_size=b,
                total_steps=steps,
                warmup_steps=warmup,
                checkpoint_every=min(tc.checkpoint_every, steps),
            )
        )
    return out


def run_batch_sweep(spec: ExperimentSpec, ctx: RunContext) -> SweepResult:
    spec = spec.validate()
    if not spec.values:
        raise ConfigError("batch sweep needs at least one batch size")
    corpus_dir, text_dir, _ = prepare_inputs(spec, ctx)
    configs = batch_sweep_configs(spec)
    grid = [(int(b), None, cfg) for b, cfg in zip(spec.values, configs)]
    return run_sweep(spec, ctx, _cells(spec, "batch_size", grid, corpus_dir, text_dir))


def run_pooling_compare(spec: ExperimentSpec, ctx: RunContext) -> SweepResult:
    spec = spec.validate()
    values = list(spec.values) or POOLING_STRATEGIES
    corpus_dir, text_dir, _ = prepare_inputs(spec, ctx)
    grid = [(v, None, spec.base.with_vision(pooling=v)) for v in values]
    return run_sweep(spec, ctx, _cells(spec, "pooling", grid, corpus_dir, text_dir))


def run_backbone_compare(spec: ExperimentSpec, ctx: RunContext) -> SweepResult:
    """Random init against the supervised-pretrained backbone, same frozen text tower."""
    spec = spec.validate()
    values = list(spec.values) or BACKBONES
    unknown = [v for v in values if v not in BACKBONES]
    if unknown:
        raise ConfigError(f"backbone compare: unknown init {unknown}, expected {BACKBONES}")
    corpus_dir, text_dir, vision_dir = prepare_inputs(spec, ctx, need_vision="pretrained" in values)
    grid = [(v, None, spec.base) for v in values]
    return run_sweep(
        spec,
        ctx,
        _cells(spec, "backbone", grid, corpus_dir, text_dir, lambda v: vision_dir if v == "pretrained" else None),
    )


def run_hparam_grid(spec: ExperimentSpec, ctx: RunContext) -> SweepResult:
    """peak_lr (values) x weight_decay (values_b)."""
    spec = spec.validate()
    if not spec.values:
        raise ConfigError("hparam grid needs at least one learning rate")
    wds = list(spec.values_b) or [spec.base.train.weight_decay]
    corpus_dir, text_dir, _ = prepare_inputs(spec, ctx)
    grid = [
        (float(lr), float(wd), spec.base.with_train(peak_lr=float(lr), weight_decay=float(wd)))
        for lr in spec.values
        for wd in wds
    ]
    return run_sweep(spec, ctx, _cells(spec, "lr", grid, corpus_dir, text_dir))


RUNNERS: dict[str, Callable[[ExperimentSpec, RunContext], SweepResult]] = {
    "batch_sweep": run_batch_sweep,
    "pooling_compare": run_pooling_compare,
    "backbone_compare": run_backbone_compare,
    "hparam_grid": run_hparam_grid,
}
