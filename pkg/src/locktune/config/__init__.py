from .loader import dump_lab_config, load_lab_config, parse_overrides
from .models import (
    DataConfig,
    EncoderConfig,
    EvalConfig,
    ExperimentSpec,
    LabConfig,
    PretrainConfig,
    TrainConfig,
    check_unified,
)

__all__ = [
    "DataConfig",
    "EncoderConfig",
    "EvalConfig",
    "ExperimentSpec",
    "LabConfig",
    "PretrainConfig",
    "TrainConfig",
    "check_unified",
    "dump_lab_config",
    "load_lab_config",
    "parse_overrides",
]
