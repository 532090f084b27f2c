from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from conftest import make_ctx
from locktune.config import loader
from locktune.config.loader import dump_lab_config
from locktune.config.models import ExperimentSpec
from locktune.errors import ConfigError, LockTuneError
from locktune.experiments import (
    RESULT_FIELDS,
    batch_sweep_configs,
    build_report,
    check_sweep,
    exit_code,
    paraphrase_batch,
    pretrain_text,
    pretrain_vision,
    run_pooling_compare,
    summarize_rows,
)
from locktune.experiments.results import SUMMARY_FILE, Check
from locktune.experiments.sweeps import CELL_FILE, CELLS_DIR
from locktune.main import app
from locktune.trainer.checkpoint import load_text_tower, load_vision_backbone
from locktune.util.csvlog import append_rows, read_rows
from locktune.util.fs import read_json

# -------------------------------------------------------------------------------------------------
# pretraining
# -------------------------------------------------------------------------------------------------


def test_paraphrase_batch_pairs_distinct_classes(rng):
    names = ["red circle", "blue square", "green cross"]
    templates = ["a photo of a {}", "a rendering of a {}", "a picture of a {}"]
    anchors, positives = paraphrase_batch(names, templates, batch_size=8, rng=rng)
    assert len(anchors) == len(positives) == 3
    assert sorted(a.split(" of a ")[1] for a in anchors) == sorted(names)
    for a, p in zip(anchors, positives):
        assert a != p
        assert a.split(" of a ")[1] == p.split(" of a ")[1]


def test_pretrain_text_saves_a_frozen_pretrained_tower(tmp_path: Path, tiny_cfg, tiny_corpus):
    tower, result = pretrain_text(tiny_corpus, make_ctx(tmp_path / "text", tiny_cfg))
    assert tower.weights.frozen
    assert all(tower.weights.pretrained.values())
    assert np.isfinite(result.final_loss)
    assert set(result.metrics) >= {"within_class", "cross_class", "checksum"}

    back = load_text_tower(tmp_path / "text")
    assert back.checksum() == tower.checksum()
    assert back.config.output_dim == tiny_cfg.vision.output_dim
    assert back.weights.frozen


def test_pretrain_vision_drops_head_and_projection(tmp_path: Path, tiny_cfg, tiny_corpus):
    backbone, result = pretrain_vision(tiny_corpus, make_ctx(tmp_path / "vision", tiny_cfg))
    names = backbone.names()
    assert not any(n.startswith(("vision.head", "vision.proj")) for n in names)
    assert "vision.patch_embed.weight" in names
    assert all(backbone.pretrained.values())
    assert 0.0 <= result.metrics["train_accuracy"] <= 1.0
    assert load_vision_backbone(tmp_path / "vision").checksum() == backbone.checksum()


# -------------------------------------------------------------------------------------------------
# sweep configs and checks
# -------------------------------------------------------------------------------------------------


def test_batch_sweep_keeps_samples_seen_fixed(tmp_path: Path, tiny_cfg):
    # base: 12 steps x batch 8, warmup 2
    spec = ExperimentSpec("batch_sweep", tiny_cfg, tmp_path, values=[4, 8, 16])
    cfgs = batch_sweep_configs(spec)
    assert [c.train.batch_size * c.train.total_steps for c in cfgs] == [96, 96, 96]
    assert [c.train.total_steps for c in cfgs] == [24, 12, 6]
    assert [c.train.warmup_steps for c in cfgs] == [4, 2, 1]
    assert all(c.train.checkpoint_every <= c.train.total_steps for c in cfgs)


@pytest.mark.parametrize("values", [[5], [1]])
def test_batch_sweep_rejects_bad_batches(tmp_path: Path, tiny_cfg, values):
    with pytest.raises(ConfigError):
        batch_sweep_configs(ExperimentSpec("batch_sweep", tiny_cfg, tmp_path, values=values))


def _row(cell: str, value, seed: int, top1: float, **extra) -> dict:
    row = {
        "cell_id": cell,
        "kind": "batch_sweep",
        "axis": "batch_size",
        "value": value,
        "value_b": None,
        "seed": seed,
        "batch_size": value,
        "steps": 96 // value,
        "samples_seen": 96,
        "zero_shot_top1": top1,
        "mean_recall_at_1": 0.5,
        "i2t_r1": 0.5,
        "t2i_r1": 0.5,
        "modality_gap": 0.8,
        "final_loss": 1.0,
        "logit_scale": 2.7,
        "chance": 1.0 / 16,
        "text_checksum": "abc",
    }
    row.update(extra)
    return row


def _batch_rows(small_top1: float, large_top1: float, seeds=(0, 1)) -> list[dict]:
    rows = []
    for i, s in enumerate(seeds):
        rows.append(_row(f"{i:03d}-b8-s{s}", 8, s, small_top1))
    for i, s in enumerate(seeds, start=len(seeds)):
        rows.append(_row(f"{i:03d}-b16-s{s}", 16, s, large_top1))
    return rows


def _by_name(checks: list[Check]) -> dict[str, Check]:
    return {c.name: c for c in checks}


def test_batch_sweep_checks_pass(tmp_path: Path, tiny_cfg):
    spec = ExperimentSpec("batch_sweep", tiny_cfg, tmp_path, values=[8, 16], seeds=[0, 1])
    checks = _by_name(check_sweep(spec, _batch_rows(0.3, 0.4)))
    for name in ("row_count", "unique_cells", "metrics_are_fractions", "identical_text_tower", "fixed_samples_seen"):
        assert checks[name].passed is True, name
    assert checks["larger_batch_not_worse"].passed is True
    assert exit_code(list(checks.values())) == 0


def test_failed_claim_only_fails_under_strict(tmp_path: Path, tiny_cfg):
    spec = ExperimentSpec("batch_sweep", tiny_cfg, tmp_path, values=[8, 16], seeds=[0, 1])
    checks = check_sweep(spec, _batch_rows(0.4, 0.3))
    assert _by_name(checks)["larger_batch_not_worse"].passed is False
    assert exit_code(checks) == 0
    assert exit_code(checks, strict=True) == 1


def test_changed_text_tower_fails_an_invariant(tmp_path: Path, tiny_cfg):
    spec = ExperimentSpec("batch_sweep", tiny_cfg, tmp_path, values=[8, 16], seeds=[0, 1])
    rows = _batch_rows(0.3, 0.4)
    rows[-1]["text_checksum"] = "def"
    checks = check_sweep(spec, rows)
    assert _by_name(checks)["identical_text_tower"].passed is False
    assert exit_code(checks) == 1


def test_single_seed_skips_trend_claims(tmp_path: Path, tiny_cfg):
    spec = ExperimentSpec("batch_sweep", tiny_cfg, tmp_path, values=[8, 16], seeds=[0])
    check = _by_name(check_sweep(spec, _batch_rows(0.4, 0.3, seeds=(0,))))["larger_batch_not_worse"]
    assert check.passed is None
    assert "skipped" in check.detail


def test_pooling_ranking_is_reported_not_asserted(tmp_path: Path, tiny_cfg):
    spec = ExperimentSpec("pooling_compare", tiny_cfg, tmp_path, values=["cls_token", "map"], seeds=[0])
    rows = [
        _row("000", "cls_token", 0, 0.5, kind="pooling_compare", axis="pooling", mean_recall_at_1=0.2),
        _row("001", "map", 0, 0.6, kind="pooling_compare", axis="pooling", mean_recall_at_1=0.4),
    ]
    checks = _by_name(check_sweep(spec, rows))
    assert checks["pooling_ranking_by_mean_r1"].passed is None
    assert checks["pooling_ranking_by_mean_r1"].detail.startswith("map")
    assert checks["all_strategies_beat_chance"].passed is True


def test_summarize_rows_uses_sample_std():
    rows = _batch_rows(0.3, 0.4)
    rows[1]["zero_shot_top1"] = 0.5
    summary = summarize_rows(rows)
    assert [(r["value"], r["n_seeds"]) for r in summary] == [("8", 2), ("16", 2)]
    assert summary[0]["zero_shot_top1_mean"] == pytest.approx(0.4)
    assert summary[0]["zero_shot_top1_std"] == pytest.approx(np.std([0.3, 0.5], ddof=1))
    assert summary[1]["zero_shot_top1_std"] == 0.0


def test_build_report_rewrites_summary(tmp_path: Path):
    append_rows(tmp_path / "batch_sweep.csv", RESULT_FIELDS, _batch_rows(0.3, 0.4))
    (tmp_path / "unrelated.csv").write_text("a,b\n1,2\n", encoding="utf-8")
    first = build_report(tmp_path)
    second = build_report(tmp_path)
    assert first == second
    assert len(read_rows(tmp_path / SUMMARY_FILE)) == 2


# -------------------------------------------------------------------------------------------------
# sweep runs
# -------------------------------------------------------------------------------------------------


def test_pooling_sweep_runs_and_reuses_cells(tmp_path: Path, tiny_cfg):
    cfg = tiny_cfg.with_train(total_steps=2, warmup_steps=1, checkpoint_every=2)
    ctx = make_ctx(tmp_path / "sweep", cfg)
    spec = ExperimentSpec("pooling_compare", cfg, ctx.out_dir, values=["mean", "map"], seeds=[0])

    first = run_pooling_compare(spec, ctx)
    assert [r["cell_id"] for r in first.rows] == ["000-pooling=mean-seed=0", "001-pooling=map-seed=0"]
    assert len(first.ran) == 2 and not first.reused
    assert len({r["text_checksum"] for r in first.rows}) == 1
    assert all((ctx.out_dir / CELLS_DIR / c / CELL_FILE).is_file() for c in first.ran)

    second = run_pooling_compare(spec, ctx)
    assert sorted(second.reused) == sorted(first.ran) and not second.ran
    assert len(read_rows(first.csv_path)) == 2
    assert all(c.passed for c in check_sweep(spec, second.rows) if c.kind == "invariant")


# -------------------------------------------------------------------------------------------------
# command line
# -------------------------------------------------------------------------------------------------


@pytest.fixture
def cli_env(tmp_path: Path, monkeypatch, tiny_cfg) -> Path:
    monkeypatch.setattr(loader, "_global_candidate_paths", lambda: [])
    monkeypatch.chdir(tmp_path)
    cfg = tiny_cfg.with_train(total_steps=4, warmup_steps=1, checkpoint_every=2)
    dump_lab_config(cfg, tmp_path / "locktune.yaml")
    return tmp_path


def test_cli_pipeline(cli_env: Path):
    runner = CliRunner()

    res = runner.invoke(app, ["gen-corpus", "--out-dir", "corpus"])
    assert res.exit_code == 0, res.output
    res = runner.invoke(app, ["pretrain-text", "--corpus", "corpus", "--out-dir", "text"])
    assert res.exit_code == 0, res.output
    res = runner.invoke(
        app,
        ["train", "--corpus", "corpus", "--text", "text", "--out-dir", "run", "--seed", "0", "--set", "train.peak_lr=5e-4"],
    )
    assert res.exit_code == 0, res.output
    assert (cli_env / "run" / "config.yaml").is_file()
    assert "zero-shot top-1" in res.output

    saved = json.loads((cli_env / "run" / "eval.json").read_text(encoding="utf-8"))
    assert saved["meta"]["step"] == 4

    res = runner.invoke(
        app, ["eval", "--checkpoint", "run/checkpoints/last", "--corpus", "corpus", "--out-dir", "ev", "-t", "a {}"]
    )
    assert res.exit_code == 0, res.output
    assert json.loads((cli_env / "ev" / "eval.json").read_text(encoding="utf-8"))["meta"]["templates"] == ["a {}"]

    res = runner.invoke(app, ["stats", "--run-dir", "run"])
    assert res.exit_code == 0, res.output
    assert "steps: 4" in res.output
    assert "caption collisions:" in res.output


def test_cli_reports_domain_errors(cli_env: Path):
    runner = CliRunner()
    assert runner.invoke(app, ["gen-corpus", "--out-dir", "corpus", "--n", "40"]).exit_code == 0
    res = runner.invoke(app, ["train", "--corpus", "corpus", "--text", "missing", "--out-dir", "run", "--seed", "0"])
    assert res.exit_code == 2
    assert "CheckpointError" in res.output

    res = runner.invoke(app, ["gen-corpus", "--out-dir", "c2", "--set", "train.batch_size=1"])
    assert res.exit_code == 2
    assert "ConfigError" in res.output


def test_cli_sweep_then_report(cli_env: Path):
    runner = CliRunner()
    res = runner.invoke(app, ["sweep-pooling", "--out-dir", "sweep", "--strategies", "mean,map", "--seeds", "0"])
    assert res.exit_code == 0, res.output
    assert (cli_env / "sweep" / "checks.json").is_file()

    res = runner.invoke(app, ["report", "--out-dir", "sweep"])
    assert res.exit_code == 0, res.output
    rows = read_rows(cli_env / "sweep" / SUMMARY_FILE)
    assert [r["value"] for r in rows] == ["mean", "map"]


def test_cli_reports_a_corrupt_cell_record(cli_env: Path):
    runner = CliRunner()
    args = ["sweep-pooling", "--out-dir", "sweep", "--strategies", "mean,map", "--seeds", "0"]
    assert runner.invoke(app, args).exit_code == 0
    record = sorted((cli_env / "sweep" / CELLS_DIR).glob(f"*/{CELL_FILE}"))[0]
    record.write_text("{not json", encoding="utf-8")

    res = runner.invoke(app, args)
    assert res.exit_code == 2
    assert "FsError" in res.output


def test_fs_errors_are_lab_errors(tmp_path: Path):
    bad = tmp_path / "cell.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(LockTuneError):
        read_json(bad)
    with pytest.raises(LockTuneError):
        read_json(tmp_path / "absent.json")


def test_cli_train_and_sweeps_require_seeds(cli_env: Path):
    runner = CliRunner()
    res = runner.invoke(app, ["train", "--corpus", "corpus", "--text", "text", "--out-dir", "run"])
    assert res.exit_code == 2
    assert not (cli_env / "run").exists()

    res = runner.invoke(app, ["sweep-pooling", "--out-dir", "sweep"])
    assert res.exit_code == 2
    assert not (cli_env / "sweep").exists()
