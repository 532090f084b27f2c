from .pretrain import PretrainResult, paraphrase_batch, pretrain_text, pretrain_vision
from .results import Check, build_report, check_sweep, exit_code, summarize_rows, write_checks
from .sweeps import (
    RESULT_FIELDS,
    RUNNERS,
    CellSpec,
    SweepResult,
    batch_sweep_configs,
    prepare_inputs,
    run_backbone_compare,
    run_batch_sweep,
    run_cell,
    run_hparam_grid,
    run_pooling_compare,
)

__all__ = [
    "CellSpec",
    "Check",
    "PretrainResult",
    "RESULT_FIELDS",
    "RUNNERS",
    "SweepResult",
    "batch_sweep_configs",
    "build_report",
    "check_sweep",
    "exit_code",
    "paraphrase_batch",
    "prepare_inputs",
    "pretrain_text",
    "pretrain_vision",
    "run_backbone_compare",
    "run_batch_sweep",
    "run_cell",
    "run_hparam_grid",
    "run_pooling_compare",
    "summarize_rows",
    "write_checks",
]
