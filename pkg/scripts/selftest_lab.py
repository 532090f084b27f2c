from __future__ import annotations
import tempfile
from pathlib import Path

import numpy as np
from rich.console import Console

from locktune.app_context import RunContext
from locktune.config.models import LabConfig
from locktune.data.corpus import generate_corpus
from locktune.eval.report import run_eval
from locktune.experiments.pretrain import pretrain_text
from locktune.tensor import grad_check, ops
from locktune.trainer.loop import train

TINY = {
    "data": {"n_samples": 160, "raster_size": 24},
    "vision": {"image_size": 16, "patch_size": 8, "embed_dim": 16, "depth": 1, "num_heads": 2, "output_dim": 8},
    "text": {"embed_dim": 16, "depth": 1, "num_heads": 2, "output_dim": 8, "pooling": "mean"},
    "train": {"total_steps": 12, "warmup_steps": 2, "batch_size": 8, "checkpoint_every": 6, "val_batches": 1},
    "pretrain_text": {"steps": 10, "warmup_steps": 2, "batch_size": 8},
}


def main():
    console = Console()
    with tempfile.TemporaryDirectory() as td:
        root = Path(td)
        cfg = LabConfig.from_obj(TINY)

        # autodiff
        rng = np.random.default_rng(0)
        rep = grad_check(lambda a: ops.sum(ops.gelu(a)), rng.normal(size=(3, 4)))
        console.print(f"GRAD: max rel err {rep.max_rel_error:.2e}")

        # corpus
        corpus = generate_corpus(cfg.data.n_samples, cfg.data)
        console.print(f"CORPUS: {corpus.split_sizes()} sha256={corpus.digest()[:16]}")

        # frozen text tower
        ctx = RunContext.create(root / "text", cfg, console=console)
        tower, res = pretrain_text(corpus, ctx)
        console.print(f"TEXT: loss={res.final_loss:.4f} checksum={tower.checksum()[:16]}")

        # locked text tuning
        run = RunContext.create(root / "run", cfg, console=console)
        out = train(corpus, tower, run)
        console.print(f"TRAIN: steps={out.steps} loss={out.final_loss:.4f} t={out.logit_scale:.4f}")

        # eval
        report = run_eval(out.last_checkpoint, corpus, run)
        console.print(f"EVAL: top1={report.zero_shot_top1:.4f} mean R@1={report.mean_recall_at_1:.4f}")


if __name__ == "__main__":
    main()
