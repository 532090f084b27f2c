from __future__ import annotations

import json
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

import typer
from rich.align import Align
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from .app_context import RunContext
from .config.loader import dump_lab_config
from .config.models import ExperimentSpec
from .data.corpus import generate_corpus
from .data.store import load_corpus, save_corpus
from .errors import LockTuneError
from .eval.report import run_eval
from .events.store import EventStore, summarize
from .experiments.pretrain import pretrain_text, pretrain_vision
from .experiments.results import build_report, check_sweep, exit_code, write_checks
from .experiments.sweeps import RUNNERS, SweepResult
from .trainer.checkpoint import load_text_tower, load_vision_backbone
from .trainer.loop import train as train_run

app = typer.Typer(add_completion=False, help="locktune: desk-scale Locked Text Tuning lab.")
console = Console()

RESOLVED_CONFIG = "config.yaml"

ConfigOpt = typer.Option(None, "--config", help="YAML or JSON config file (merged over global and project files).")
SetOpt = typer.Option(None, "--set", "-s", help="Override a config key, e.g. --set train.peak_lr=5e-4 (repeatable).")
TraceOpt = typer.Option(False, "--trace", help="Print every step event.")
CorpusOpt = typer.Option(..., "--corpus", help="Corpus directory written by gen-corpus.")


@contextmanager
def _handled() -> Iterator[None]:
    try:
        yield
    except LockTuneError as e:
        console.print(Panel(str(e), title=f"[bold red]{type(e).__name__}[/bold red]", border_style="red"))
        raise typer.Exit(code=2)


def _context(out_dir: Path, config: Path | None, overrides: list[str] | None, trace: bool, extra: Iterable[str] = ()) -> RunContext:
    return RunContext.from_env(
        cwd=Path.cwd(),
        out_dir=out_dir,
        config_path=config,
        overrides=list(overrides or []) + list(extra),
        trace=trace,
        console=console,
    )


def _header(title: str, ctx: RunContext, rows: dict[str, Any]) -> None:
    table = Table.grid(padding=(0, 2))
    table.add_row("📁 [bold green]out_dir[/bold green]", f"[bright_cyan]{ctx.out_dir}[/bright_cyan]")
    for k, v in rows.items():
        table.add_row(f"[bold green]{k}[/bold green]", f"[bright_cyan]{v}[/bright_cyan]")
    sources = ", ".join(str(p) for p in ctx.config_sources) or "(defaults)"
    table.add_row("⚙️ [bold green]config[/bold green]", f"[bright_cyan]{sources}[/bright_cyan]")
    console.print(Align.center(Panel(table, title=f"[bold magenta]{title}[/bold magenta]", border_style="bright_blue")))


def _split_list(raw: str | None, cast: Callable[[str], Any]) -> list[Any]:
    if not raw:
        return []
    try:
        return [cast(x.strip()) for x in raw.split(",") if x.strip()]
    except ValueError as e:
        raise typer.BadParameter(f"cannot parse list {raw!r}: {e}") from None


def _opt(v: float | None) -> str:
    return "-" if v is None else f"{v:.4f}"


def _seed_override(key: str, seed: int | None) -> list[str]:
    return [] if seed is None else [f"{key}={seed}"]


@app.command("gen-corpus")
def gen_corpus(
    out_dir: Path = typer.Option(..., "--out-dir", help="Directory to write the corpus into."),
    n: int = typer.Option(None, "--n", help="Number of samples (default: data.n_samples)."),
    seed: int = typer.Option(None, "--seed", help="Corpus seed (default: data.seed)."),
    config: Path = ConfigOpt,
    overrides: list[str] = SetOpt,
    trace: bool = TraceOpt,
):
    """Generate the synthetic colored-shape corpus."""
    with _handled():
        ctx = _context(out_dir, config, overrides, trace, _seed_override("data.seed", seed))
        data = ctx.config.data
        corpus = generate_corpus(n or data.n_samples, data)
        save_corpus(corpus, ctx.out_dir)
        sizes = corpus.split_sizes()
        digest = corpus.digest()
        ctx.emit("corpus.generated", {"path": str(ctx.out_dir), "n": len(corpus.samples), "splits": sizes, "digest": digest})
        _header(
            "gen-corpus",
            ctx,
            {
                "samples": len(corpus.samples),
                "classes": corpus.num_classes,
                "splits": " ".join(f"{k}={v}" for k, v in sizes.items()),
                "vocab": len(corpus.vocab),
                "sha256": digest,
            },
        )


@app.command("pretrain-text")
def pretrain_text_cmd(
    corpus: Path = CorpusOpt,
    out_dir: Path = typer.Option(..., "--out-dir", help="Directory for the frozen text tower."),
    seed: int = typer.Option(None, "--seed", help="Seed for init and pair sampling."),
    config: Path = ConfigOpt,
    overrides: list[str] = SetOpt,
    trace: bool = TraceOpt,
):
    """Train the stand-in "pretrained" text tower on caption paraphrases."""
    with _handled():
        ctx = _context(out_dir, config, overrides, trace, _seed_override("pretrain_text.seed", seed))
        pc = ctx.config.pretrain_text
        _header("pretrain-text", ctx, {"corpus": corpus, "steps": pc.steps, "batch": pc.batch_size})
        _, result = pretrain_text(load_corpus(corpus), ctx)
        m = result.metrics
        console.print(
            f"[green]text tower saved[/green] loss={m['final_loss']:.4f} "
            f"within-class={_opt(m['within_class'])} cross-class={_opt(m['cross_class'])}"
        )


@app.command("pretrain-vision")
def pretrain_vision_cmd(
    corpus: Path = CorpusOpt,
    out_dir: Path = typer.Option(..., "--out-dir", help="Directory for the pretrained ViT backbone."),
    seed: int = typer.Option(None, "--seed", help="Seed for init and batching."),
    config: Path = ConfigOpt,
    overrides: list[str] = SetOpt,
    trace: bool = TraceOpt,
):
    """Supervised classification pretraining of the ViT; the head is discarded."""
    with _handled():
        ctx = _context(out_dir, config, overrides, trace, _seed_override("pretrain_vision.seed", seed))
        pc = ctx.config.pretrain_vision
        _header("pretrain-vision", ctx, {"corpus": corpus, "steps": pc.steps, "batch": pc.batch_size})
        _, result = pretrain_vision(load_corpus(corpus), ctx)
        console.print(f"[green]backbone saved[/green] train accuracy={result.metrics['train_accuracy']:.4f}")


@app.command()
def train(
    corpus: Path = CorpusOpt,
    text: Path = typer.Option(..., "--text", help="Text tower directory (pretrain-text output)."),
    out_dir: Path = typer.Option(..., "--out-dir", help="Run directory."),
    vision: Path = typer.Option(None, "--vision", help="Optional pretrained vision backbone."),
    seed: int = typer.Option(..., "--seed", help="Training seed (train.seed); a resumed run needs its original seed."),
    resume: bool = typer.Option(False, "--resume", help="Continue from <out-dir>/checkpoints/last."),
    stop_after: int = typer.Option(None, "--stop-after", help="Checkpoint and stop after this many steps."),
    evaluate: bool = typer.Option(True, "--eval/--no-eval", help="Evaluate the last checkpoint when done."),
    config: Path = ConfigOpt,
    overrides: list[str] = SetOpt,
    trace: bool = TraceOpt,
):
    """Locked Text Tuning: train the vision tower against the frozen text tower."""
    with _handled():
        ctx = _context(out_dir, config, overrides, trace, _seed_override("train.seed", seed))
        tc = ctx.config.train
        _header(
            "train",
            ctx,
            {
                "corpus": corpus,
                "text tower": text,
                "vision init": vision or "random",
                "steps": tc.total_steps,
                "batch": tc.batch_size,
                "freeze_text": tc.freeze_text,
                "config hash": ctx.config.digest()[:16],
            },
        )
        dump_lab_config(ctx.config, ctx.out_dir / RESOLVED_CONFIG)
        data = load_corpus(corpus)
        tower = load_text_tower(text)
        init = load_vision_backbone(vision) if vision else None
        result = train_run(data, tower, ctx, vision_init=init, resume=resume, stop_after=stop_after)
        if result.interrupted:
            console.print(f"[yellow]stopped at step {result.steps}[/yellow]; resume with --resume")
            return
        if evaluate:
            report = run_eval(result.last_checkpoint, data, ctx)
            console.print(
                f"[green]zero-shot top-1[/green] {report.zero_shot_top1:.4f} "
                f"(chance {report.meta['chance']:.4f})  mean R@1 {report.mean_recall_at_1:.4f}"
            )


@app.command("eval")
def eval_cmd(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Training checkpoint directory."),
    corpus: Path = CorpusOpt,
    out_dir: Path = typer.Option(None, "--out-dir", help="Where eval.json goes (default: the checkpoint)."),
    split: str = typer.Option("test", "--split", help="train, val or test."),
    template: list[str] = typer.Option(None, "--template", "-t", help="Prompt template with one {} slot (repeatable)."),
    config: Path = ConfigOpt,
    overrides: list[str] = SetOpt,
    trace: bool = TraceOpt,
):
    """Zero-shot classification, paired retrieval and modality gap."""
    with _handled():
        ctx = _context(out_dir or checkpoint, config, overrides, trace)
        report = run_eval(checkpoint, load_corpus(corpus), ctx, templates=template or None, split=split)
        table = Table(title=f"eval {split} (n={report.meta['n']})")
        table.add_column("metric")
        table.add_column("value", justify="right")
        table.add_row("zero-shot top-1", f"{report.zero_shot_top1:.4f}")
        table.add_row("chance", f"{report.meta['chance']:.4f}")
        for direction, ks in report.recall.items():
            for k, v in ks.items():
                table.add_row(f"{direction} R@{k}", f"{v:.4f}")
        table.add_row("mean R@1", f"{report.mean_recall_at_1:.4f}")
        table.add_row("modality gap", f"{report.modality_gap:.4f}")
        for key, v in report.text_sanity.items():
            table.add_row(f"text {key} cosine", "-" if v is None else f"{v:.4f}")
        console.print(table)


# ---------------------------------------------------------
# sweeps
# ---------------------------------------------------------
def _print_sweep(result: SweepResult) -> None:
    table = Table(title=f"{result.kind} ({len(result.ran)} run, {len(result.reused)} reused)")
    for col in ("cell", "value", "seed", "steps", "zero-shot", "mean R@1", "gap", "loss"):
        table.add_column(col, justify="right" if col != "cell" else "left")
    for r in result.rows:
        value = r["value"] if r.get("value_b") is None else f"{r['value']} / {r['value_b']}"
        table.add_row(
            str(r["cell_id"]),
            str(value),
            str(r["seed"]),
            str(r["steps"]),
            f"{r['zero_shot_top1']:.4f}",
            f"{r['mean_recall_at_1']:.4f}",
            f"{r['modality_gap']:.4f}",
            f"{r['final_loss']:.4f}",
        )
    console.print(table)
    console.print(f"results: {result.csv_path}")


def _print_checks(checks) -> None:
    marks = {True: "[green]pass[/green]", False: "[red]FAIL[/red]", None: "[dim]-[/dim]"}
    table = Table(title="checks")
    table.add_column("kind")
    table.add_column("check")
    table.add_column("result")
    table.add_column("detail")
    for c in checks:
        table.add_row(c.kind, c.name, marks[c.passed], c.detail)
    console.print(table)


def _sweep(
    kind: str,
    *,
    out_dir: Path,
    values: list[Any],
    seeds: str,
    corpus: Path | None,
    text: Path | None,
    vision: Path | None = None,
    values_b: list[float] | None = None,
    samples_seen: int | None = None,
    workers: int,
    strict: bool,
    config: Path | None,
    overrides: list[str] | None,
    trace: bool,
) -> None:
    with _handled():
        ctx = _context(out_dir, config, overrides, trace)
        spec = ExperimentSpec(
            kind=kind,
            base=ctx.config,
            out_dir=ctx.out_dir,
            values=values,
            seeds=_split_list(seeds, int),
            samples_seen=samples_seen,
            workers=workers,
            values_b=values_b or [],
            corpus_dir=corpus,
            text_dir=text,
            vision_dir=vision,
        ).validate()
        _header(
            kind,
            ctx,
            {"values": values or "(defaults)", "seeds": spec.seeds, "workers": workers, "config hash": ctx.config.digest()[:16]},
        )
        dump_lab_config(ctx.config, ctx.out_dir / RESOLVED_CONFIG)
        result = RUNNERS[kind](spec, ctx)
        checks = check_sweep(spec, result.rows)
        write_checks(ctx.out_dir, checks)
        for c in checks:
            ctx.emit("sweep.check", c.to_dict())
        _print_sweep(result)
        _print_checks(checks)
        code = exit_code(checks, strict=strict)
    if code:
        raise typer.Exit(code=code)


SeedsOpt = typer.Option(..., "--seeds", help="Comma-separated seeds, e.g. 0,1,2.")
WorkersOpt = typer.Option(1, "--workers", help="Parallel cell processes.")
StrictOpt = typer.Option(False, "--strict", help="Failed trend claims also fail the exit code.")
SweepCorpusOpt = typer.Option(None, "--corpus", help="Corpus directory (default: generated under out-dir).")
SweepTextOpt = typer.Option(None, "--text", help="Text tower directory (default: pretrained under out-dir).")
SweepOutOpt = typer.Option(..., "--out-dir", help="Sweep directory.")


@app.command("sweep-batch")
def sweep_batch(
    batches: str = typer.Option("8,16,32,64", "--batches", help="Comma-separated batch sizes, ascending."),
    samples_seen: int = typer.Option(None, "--samples-seen", help="Fixed steps x batch (default: base config's)."),
    out_dir: Path = SweepOutOpt,
    seeds: str = SeedsOpt,
    corpus: Path = SweepCorpusOpt,
    text: Path = SweepTextOpt,
    workers: int = WorkersOpt,
    strict: bool = StrictOpt,
    config: Path = ConfigOpt,
    overrides: list[str] = SetOpt,
    trace: bool = TraceOpt,
):
    """Zero-shot accuracy against batch size at a fixed number of samples seen."""
    _sweep(
        "batch_sweep",
        out_dir=out_dir,
        values=_split_list(batches, int),
        seeds=seeds,
        corpus=corpus,
        text=text,
        samples_seen=samples_seen,
        workers=workers,
        strict=strict,
        config=config,
        overrides=overrides,
        trace=trace,
    )


@app.command("sweep-pooling")
def sweep_pooling(
    strategies: str = typer.Option("cls_token,mean,map", "--strategies", help="Pooling strategies to compare."),
    out_dir: Path = SweepOutOpt,
    seeds: str = SeedsOpt,
    corpus: Path = SweepCorpusOpt,
    text: Path = SweepTextOpt,
    workers: int = WorkersOpt,
    strict: bool = StrictOpt,
    config: Path = ConfigOpt,
    overrides: list[str] = SetOpt,
    trace: bool = TraceOpt,
):
    """CLS token, mean and attention-probe pooling under identical configs."""
    _sweep(
        "pooling_compare",
        out_dir=out_dir,
        values=_split_list(strategies, str),
        seeds=seeds,
        corpus=corpus,
        text=text,
        workers=workers,
        strict=strict,
        config=config,
        overrides=overrides,
        trace=trace,
    )


@app.command("sweep-backbone")
def sweep_backbone(
    vision: Path = typer.Option(None, "--vision", help="Pretrained backbone (default: pretrained under out-dir)."),
    out_dir: Path = SweepOutOpt,
    seeds: str = SeedsOpt,
    corpus: Path = SweepCorpusOpt,
    text: Path = SweepTextOpt,
    workers: int = WorkersOpt,
    strict: bool = StrictOpt,
    config: Path = ConfigOpt,
    overrides: list[str] = SetOpt,
    trace: bool = TraceOpt,
):
    """Random against pretrained vision initialisation, same frozen text tower."""
    _sweep(
        "backbone_compare",
        out_dir=out_dir,
        values=["random", "pretrained"],
        seeds=seeds,
        corpus=corpus,
        text=text,
        vision=vision,
        workers=workers,
        strict=strict,
        config=config,
        overrides=overrides,
        trace=trace,
    )


@app.command("sweep-hparams")
def sweep_hparams(
    lrs: str = typer.Option(..., "--lrs", help="Comma-separated peak learning rates, ascending."),
    wds: str = typer.Option(None, "--wds", help="Comma-separated weight decays (default: base config's)."),
    out_dir: Path = SweepOutOpt,
    seeds: str = SeedsOpt,
    corpus: Path = SweepCorpusOpt,
    text: Path = SweepTextOpt,
    workers: int = WorkersOpt,
    strict: bool = StrictOpt,
    config: Path = ConfigOpt,
    overrides: list[str] = SetOpt,
    trace: bool = TraceOpt,
):
    """Small learning-rate x weight-decay grid."""
    _sweep(
        "hparam_grid",
        out_dir=out_dir,
        values=_split_list(lrs, float),
        values_b=_split_list(wds, float),
        seeds=seeds,
        corpus=corpus,
        text=text,
        workers=workers,
        strict=strict,
        config=config,
        overrides=overrides,
        trace=trace,
    )


@app.command()
def report(
    out_dir: Path = typer.Option(..., "--out-dir", help="Directory holding sweep result CSVs."),
    strict: bool = StrictOpt,
):
    """Seed mean and std per sweep value, written to summary.csv."""
    with _handled():
        out_dir = out_dir.expanduser().resolve()
        summary = build_report(out_dir)
        if not summary:
            console.print(f"No sweep results under {out_dir}.")
            raise typer.Exit(code=0)
        table = Table(title=f"summary ({out_dir / 'summary.csv'})")
        for col in ("kind", "value", "seeds", "zero-shot", "mean R@1", "gap"):
            table.add_column(col, justify="left" if col in ("kind", "value") else "right")
        for r in summary:
            value = r["value"] if not r["value_b"] else f"{r['value']} / {r['value_b']}"
            table.add_row(
                str(r["kind"]),
                str(value),
                str(r["n_seeds"]),
                f"{r['zero_shot_top1_mean']:.4f} ± {r['zero_shot_top1_std']:.4f}",
                f"{r['mean_recall_at_1_mean']:.4f} ± {r['mean_recall_at_1_std']:.4f}",
                f"{r['modality_gap_mean']:.4f} ± {r['modality_gap_std']:.4f}",
            )
        console.print(table)

        checks_path = out_dir / "checks.json"
        if checks_path.is_file():
            recorded = json.loads(checks_path.read_text(encoding="utf-8"))
            failed = [c for c in recorded if c.get("passed") is False]
            for c in failed:
                console.print(f"[red]FAIL[/red] {c['kind']} {c['name']}: {c.get('detail', '')}")
            if any(c["kind"] == "invariant" for c in failed) or (strict and failed):
                raise typer.Exit(code=1)


# ---------------------------------------------------------
# run inspection
# ---------------------------------------------------------
@app.command()
def events(
    run_dir: Path = typer.Option(..., "--run-dir", help="Run directory holding events.jsonl."),
    tail: int = typer.Option(50, "--tail", help="Show last N events."),
    type_: list[str] = typer.Option(None, "--type", help="Only these event types (repeatable)."),
):
    """Show recent structured events of a run."""
    es = EventStore.open(run_dir)
    evs = es.iter_events(type_ or None)
    evs = evs[-tail:] if tail and tail > 0 else evs
    console.print(Panel.fit(f"run: {run_dir}\nfile: {es.path}\nevents: {len(evs)}", title="Events"))
    for e in evs:
        ts = datetime.fromtimestamp(e.ts).strftime("%Y-%m-%d %H:%M:%S")
        console.print(Panel.fit(json.dumps(e.data, ensure_ascii=False, indent=2)[:4000], title=f"{ts}  {e.type}"))


@app.command()
def stats(
    run_dir: Path = typer.Option(..., "--run-dir", help="Run directory holding events.jsonl."),
):
    """Summarise a run from its event log."""
    es = EventStore.open(run_dir)
    st = summarize(es.iter_events())
    lines = [f"events_file: {es.path}"]
    lines.append(f"steps: {st.steps}")
    if st.last_loss is not None:
        lines.append(f"last_loss: {st.last_loss:.6g}")
    if st.last_logit_scale is not None:
        lines.append(f"last_logit_scale: {st.last_logit_scale:.6g}")
    lines.append(f"checkpoints: {', '.join(map(str, st.checkpoints)) or '(none)'}")
    lines.append(f"resumes: {st.resumes}  divergences: {st.divergences}  caption collisions: {st.collisions}")
    for ev in st.evals:
        lines.append(
            f"eval: zero_shot_top1={ev.get('zero_shot_top1')} mean_recall_at_1={ev.get('mean_recall_at_1')}"
        )
    if st.failed_checks:
        lines.append(f"failed checks: {', '.join(st.failed_checks)}")
    lines.append("counts: " + ", ".join(f"{k}={v}" for k, v in st.counts.items()))
    console.print(Panel("\n".join(lines), title="Stats"))
