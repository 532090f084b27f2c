from .checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_text_tower,
    load_vision_backbone,
    save_checkpoint,
    save_text_tower,
    save_vision_backbone,
)
from .loop import METRICS_HEADER, TrainResult, train, validation_loss
from .optim import AdamWState, OptimizerParams, ParamGroup, adamw_step, is_no_decay_name, param_groups
from .schedule import lr_at
from .state import TrainState

__all__ = [
    "AdamWState",
    "Checkpoint",
    "METRICS_HEADER",
    "OptimizerParams",
    "ParamGroup",
    "TrainResult",
    "TrainState",
    "adamw_step",
    "is_no_decay_name",
    "load_checkpoint",
    "load_text_tower",
    "load_vision_backbone",
    "lr_at",
    "param_groups",
    "save_checkpoint",
    "save_text_tower",
    "save_vision_backbone",
    "train",
    "validation_loss",
]
