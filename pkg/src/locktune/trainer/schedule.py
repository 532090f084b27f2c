from __future__ import annotations

import math

from ..config.models import TrainConfig
from ..errors import ConfigError


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup 0 -> peak over warmup_steps, then cosine decay to 0 at
    total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ConfigError(f"lr_at: step {step} outside [0, {cfg.total_steps}]")
    peak, warm, total = cfg.peak_lr, cfg.warmup_steps, cfg.total_steps
    if step < warm:
        return peak * step / warm
    if total == warm:
        return peak
    progress = (step - warm) / (total - warm)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))
