from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping, Sequence

import numpy as np

from ..config.models import ExperimentSpec
from ..util.csvlog import append_rows, read_rows
from ..util.fs import write_json_atomic
from .sweeps import BACKBONES, POOLING_STRATEGIES, RESULT_FIELDS

CHECKS_FILE = "checks.json"
SUMMARY_FILE = "summary.csv"
SUMMARY_METRICS = ("zero_shot_top1", "mean_recall_at_1", "modality_gap", "final_loss", "logit_scale")
SUMMARY_FIELDS = ("kind", "axis", "value", "value_b", "n_seeds") + tuple(
    f"{m}_{stat}" for m in SUMMARY_METRICS for stat in ("mean", "std")
)

CheckKind = Literal["invariant", "claim", "report"]


@dataclass(frozen=True)
class Check:
    """invariant: must hold. claim: a trend reproduction, reported (fatal only
    under --strict). report: informational, passed is None."""

    kind: CheckKind
    name: str
    passed: bool | None
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _num(v: Any) -> float:
    if v is None or v == "":
        return float("nan")
    return float(v)


def _key(v: Any) -> str:
    return "" if v is None else str(v)


def group_rows(rows: Iterable[Mapping[str, Any]]) -> dict[tuple[str, str], list[Mapping[str, Any]]]:
    """Rows keyed by (value, value_b), in first-seen order."""
    out: dict[tuple[str, str], list[Mapping[str, Any]]] = {}
    for r in rows:
        out.setdefault((_key(r.get("value")), _key(r.get("value_b"))), []).append(r)
    return out


def seed_mean(rows: Sequence[Mapping[str, Any]], metric: str) -> float:
    return float(np.mean([_num(r[metric]) for r in rows]))


def _fractions_ok(rows: Sequence[Mapping[str, Any]]) -> Check:
    bad = [
        f"{r['cell_id']}:{m}"
        for r in rows
        for m in ("zero_shot_top1", "mean_recall_at_1", "i2t_r1", "t2i_r1")
        if not 0.0 <= _num(r[m]) <= 1.0
    ]
    return Check("invariant", "metrics_are_fractions", not bad, ", ".join(bad))


def _text_tower_shared(rows: Sequence[Mapping[str, Any]]) -> Check:
    sums = sorted({str(r["text_checksum"]) for r in rows})
    return Check("invariant", "identical_text_tower", len(sums) == 1, f"{len(sums)} distinct checksum(s)")


def _expected_rows(spec: ExperimentSpec) -> int:
    defaults = {"pooling_compare": POOLING_STRATEGIES, "backbone_compare": BACKBONES}
    n_values = len(spec.values) or len(defaults.get(spec.kind, []))
    if spec.kind == "hparam_grid":
        return n_values * max(1, len(spec.values_b)) * len(spec.seeds)
    return n_values * len(spec.seeds)


def _trend(
    name: str, spec: ExperimentSpec, better: float, worse: float, what: str
) -> Check:
    if not spec.supports_trend_claims:
        return Check("claim", name, None, f"skipped: {len(spec.seeds)} seed(s), trend claims need >= 2")
    return Check("claim", name, better >= worse, f"{what}: {better:.4f} vs {worse:.4f}")


def check_sweep(spec: ExperimentSpec, rows: Sequence[Mapping[str, Any]]) -> list[Check]:
    """Invariants, trend claims and reported orderings for one sweep's rows."""
    checks: list[Check] = []
    expected = _expected_rows(spec)
    checks.append(Check("invariant", "row_count", len(rows) == expected, f"{len(rows)} rows, expected {expected}"))
    ids = [str(r["cell_id"]) for r in rows]
    checks.append(Check("invariant", "unique_cells", len(ids) == len(set(ids)), ""))
    if not rows:
        return checks
    checks.append(_fractions_ok(rows))
    checks.append(_text_tower_shared(rows))

    groups = group_rows(rows)
    chance = _num(rows[0]["chance"])

    if spec.kind == "batch_sweep":
        seen = sorted({int(_num(r["samples_seen"])) for r in rows})
        ok = len(seen) == 1 and (spec.samples_seen is None or seen[0] == spec.samples_seen)
        checks.append(Check("invariant", "fixed_samples_seen", ok, f"samples_seen values {seen}"))
        by_batch = sorted(groups.items(), key=lambda kv: int(float(kv[0][0])))
        small, large = by_batch[0], by_batch[-1]
        checks.append(
            _trend(
                "larger_batch_not_worse",
                spec,
                seed_mean(large[1], "zero_shot_top1"),
                seed_mean(small[1], "zero_shot_top1"),
                f"zero-shot top-1 at batch {large[0][0]} vs {small[0][0]}",
            )
        )
    elif spec.kind == "pooling_compare":
        means = {v: seed_mean(rs, "zero_shot_top1") for (v, _), rs in groups.items()}
        below = [v for v, m in means.items() if m <= chance]
        checks.append(
            Check("claim", "all_strategies_beat_chance", not below, f"chance {chance:.4f}; at or below: {below}")
        )
        r1 = {v: seed_mean(rs, "mean_recall_at_1") for (v, _), rs in groups.items()}
        ranking = sorted(r1, key=lambda v: -r1[v])
        checks.append(
            Check("report", "pooling_ranking_by_mean_r1", None, " > ".join(f"{v} ({r1[v]:.4f})" for v in ranking))
        )
    elif spec.kind == "backbone_compare":
        means = {v: seed_mean(rs, "zero_shot_top1") for (v, _), rs in groups.items()}
        if "pretrained" in means and "random" in means:
            checks.append(
                _trend(
                    "pretrained_backbone_not_worse",
                    spec,
                    means["pretrained"],
                    means["random"],
                    "zero-shot top-1 pretrained vs random",
                )
            )
        if "random" in means:
            checks.append(
                Check(
                    "claim",
                    "random_init_beats_chance",
                    means["random"] > chance,
                    f"{means['random']:.4f} vs chance {chance:.4f}",
                )
            )
    elif spec.kind == "hparam_grid":
        means = {k: seed_mean(rs, "zero_shot_top1") for k, rs in groups.items()}
        best = max(means, key=lambda k: means[k])
        checks.append(
            Check("report", "best_lr_wd", None, f"lr={best[0]} wd={best[1]}: zero-shot top-1 {means[best]:.4f}")
        )
    return checks


def exit_code(checks: Sequence[Check], *, strict: bool = False) -> int:
    if any(c.kind == "invariant" and c.passed is False for c in checks):
        return 1
    if strict and any(c.kind == "claim" and c.passed is False for c in checks):
        return 1
    return 0


def write_checks(out_dir: Path, checks: Sequence[Check]) -> Path:
    path = out_dir / CHECKS_FILE
    write_json_atomic(path, [c.to_dict() for c in checks])
    return path


# ---------------------------------------------------------
# report
# ---------------------------------------------------------
def result_files(out_dir: Path) -> list[Path]:
    """Sweep result CSVs directly under out_dir (recognised by their header)."""
    found: list[Path] = []
    for p in sorted(out_dir.glob("*.csv")):
        if p.name == SUMMARY_FILE:
            continue
        first = p.read_text(encoding="utf-8").split("\n", 1)[0]
        if first == ",".join(RESULT_FIELDS):
            found.append(p)
    return found


def summarize_rows(rows: Sequence[Mapping[str, Any]]) -> list[dict[str, Any]]:
    """Seed mean and std (ddof=1; 0 for a single seed) per axis value."""
    out: list[dict[str, Any]] = []
    for (value, value_b), rs in group_rows(rows).items():
        row: dict[str, Any] = {
            "kind": rs[0]["kind"],
            "axis": rs[0]["axis"],
            "value": value,
            "value_b": value_b,
            "n_seeds": len(rs),
        }
        for m in SUMMARY_METRICS:
            xs = np.array([_num(r[m]) for r in rs])
            row[f"{m}_mean"] = float(xs.mean())
            row[f"{m}_std"] = float(xs.std(ddof=1)) if len(xs) > 1 else 0.0
        out.append(row)
    return out


def build_report(out_dir: Path) -> list[dict[str, Any]]:
    """Aggregate every result CSV under out_dir into summary.csv (rewritten)."""
    summary: list[dict[str, Any]] = []
    for path in result_files(out_dir):
        summary.extend(summarize_rows(read_rows(path)))
    target = out_dir / SUMMARY_FILE
    # rebuilt on every report
    target.unlink(missing_ok=True)
    target.with_name(target.name + ".header.sha256").unlink(missing_ok=True)
    if summary:
        append_rows(target, SUMMARY_FIELDS, summary)
    return summary
