from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..errors import DegenerateInputError, ShapeError
from ..tensor import Tensor, ops

UNIT_NORM_TOL = 1e-6


@dataclass
class LogitScale:
    """Learnable log-temperature t; logits are multiplied by exp(t).

    Never clamped: whatever the optimizer writes is what the next step uses.
    """

    param: Tensor

    @staticmethod
    def init(t: float, trainable: bool = True) -> "LogitScale":
        return LogitScale(Tensor(np.array(float(t)), requires_grad=trainable, name="logit_scale"))

    @property
    def value(self) -> float:
        return self.param.item()

    @property
    def scale(self) -> float:
        return math.exp(self.value)


def assert_unit_norm(x: Tensor, what: str, tol: float = UNIT_NORM_TOL) -> None:
    norms = np.linalg.norm(x.data, axis=-1)
    dev = np.abs(norms - 1.0)
    if dev.size and float(dev.max()) > tol:
        i = int(np.argmax(dev))
        raise DegenerateInputError(
            f"{what}: row {i} has norm {norms.reshape(-1)[i]:.9f}, expected unit norm within {tol}"
        )


def _scale_tensor(scale: LogitScale | float | Any) -> Tensor:
    if isinstance(scale, LogitScale):
        return scale.param
    if isinstance(scale, Tensor):
        return scale
    return Tensor(np.array(float(scale)))


def similarity_logits(img: Tensor, txt: Tensor, scale: LogitScale | float) -> Tensor:
    """logits[i, j] = exp(t) * <img_i, txt_j>; the diagonal holds the positives."""
    img, txt = ops.as_tensor(img), ops.as_tensor(txt)
    if img.ndim != 2 or img.shape != txt.shape:
        raise ShapeError(f"similarity_logits: img {img.shape} and txt {txt.shape} must both be [B, D]")
    assert_unit_norm(img, "image embeddings")
    assert_unit_norm(txt, "text embeddings")
    t = _scale_tensor(scale)
    if t.size != 1:
        raise ShapeError(f"logit scale must be a scalar, got shape {t.shape}")
    return ops.mul(ops.exp(t), ops.matmul(img, ops.transpose(txt)))


def info_nce(logits: Tensor) -> Tensor:
    """Symmetric cross-entropy with the diagonal as targets, averaged over the
    batch and over the two directions."""
    logits = ops.as_tensor(logits)
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise ShapeError(f"info_nce: logits must be square, got {logits.shape}")
    b = logits.shape[0]
    if b < 2:
        raise DegenerateInputError(f"info_nce: batch size {b} < 2 leaves no negatives")
    eye = np.eye(b)
    rows = ops.sum(ops.mul(ops.log_softmax(logits, axis=1), eye))
    cols = ops.sum(ops.mul(ops.log_softmax(logits, axis=0), eye))
    return ops.scale(ops.add(rows, cols), -0.5 / b)


def contrastive_step_loss(img_emb: Tensor, txt_emb: Tensor, scale: LogitScale | float) -> Tensor:
    return info_nce(similarity_logits(img_emb, txt_emb, scale))
