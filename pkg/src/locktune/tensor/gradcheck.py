from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from ..errors import GraphError
from .core import Tensor, backward, no_grad


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: np.ndarray
    numeric: np.ndarray
    step: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Any,
    step: float = 1e-4,
    tol: float = 1e-4,
    *,
    denom_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare the analytic gradient of scalar f at x with central differences.

    Relative error per entry is |a - n| / max(|a|, |n|, denom_floor); the floor
    keeps entries whose true gradient is ~0 from dominating the report.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base, requires_grad=True, name="grad_check.x")
    out = f(probe)
    if out.size != 1:
        raise GraphError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.empty_like(base)
    with no_grad():
        for idx in np.ndindex(base.shape):
            plus = base.copy()
            plus[idx] += step
            minus = base.copy()
            minus[idx] -= step
            numeric[idx] = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), denom_floor)
    rel = np.abs(analytic - numeric) / denom
    if rel.size == 0:
        return GradCheckReport(0.0, (), analytic, numeric, step, tol)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return GradCheckReport(
        max_rel_error=float(rel[worst]),
        worst_index=tuple(int(i) for i in worst),
        analytic=analytic,
        numeric=numeric,
        step=step,
        tol=tol,
    )
