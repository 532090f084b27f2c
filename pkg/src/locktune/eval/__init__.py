from .metrics import (
    class_text_embeddings,
    modality_gap,
    partner_ranks,
    prompt_similarity,
    recall_at_k,
    recall_table,
    zero_shot_classify,
    zero_shot_predict,
)
from .report import EvalReport, embed_samples, evaluate, run_eval

__all__ = [
    "EvalReport",
    "class_text_embeddings",
    "embed_samples",
    "evaluate",
    "modality_gap",
    "partner_ranks",
    "prompt_similarity",
    "recall_at_k",
    "recall_table",
    "run_eval",
    "zero_shot_classify",
    "zero_shot_predict",
]
