from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..config.models import TrainConfig
from ..contrastive.loss import LogitScale
from ..encoders.weights import TowerWeights
from ..errors import GraphError, NonFiniteError
from ..tensor import Tensor

LOGIT_SCALE = "logit_scale"

_NO_DECAY = re.compile(r"(\.bias$)|((^|\.)(ln\d*|norm)\.weight$)")


def is_no_decay_name(name: str) -> bool:
    """LayerNorm gains, biases and the logit scale never decay."""
    return name == LOGIT_SCALE or bool(_NO_DECAY.search(name))


@dataclass(frozen=True)
class ParamGroup:
    name: str
    weight_decay: float
    params: tuple[str, ...]


@dataclass
class OptimizerParams:
    """The trainable set: name -> tensor, name -> weight decay."""

    tensors: dict[str, Tensor]
    weight_decay: dict[str, float]
    groups: list[ParamGroup]

    def names(self) -> list[str]:
        return sorted(self.tensors)


def param_groups(
    towers: Sequence[TowerWeights],
    cfg: TrainConfig,
    logit_scale: LogitScale | None = None,
) -> OptimizerParams:
    """Assign weight decay: 0 for pretrained-flagged, LN, bias and logit-scale
    parameters, cfg.weight_decay otherwise. Frozen parameters are left out."""
    tensors: dict[str, Tensor] = {}
    decay: list[str] = []
    no_decay: list[str] = []
    for tower in towers:
        for name in tower.names():
            t = tower.params[name]
            if not t.requires_grad:
                continue
            if name in tensors:
                raise GraphError(f"parameter '{name}' appears in two towers")
            tensors[name] = t
            if tower.pretrained.get(name, False) or is_no_decay_name(name):
                no_decay.append(name)
            else:
                decay.append(name)
    if logit_scale is not None and logit_scale.param.requires_grad:
        tensors[LOGIT_SCALE] = logit_scale.param
        no_decay.append(LOGIT_SCALE)

    groups = [
        ParamGroup("decay", float(cfg.weight_decay), tuple(sorted(decay))),
        ParamGroup("no_decay", 0.0, tuple(sorted(no_decay))),
    ]
    wd = {n: g.weight_decay for g in groups for n in g.params}
    return OptimizerParams(tensors=tensors, weight_decay=wd, groups=groups)


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": a for k, a in self.m.items()}
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    @staticmethod
    def from_arrays(step: int, arrays: Mapping[str, np.ndarray]) -> "AdamWState":
        st = AdamWState(step=step)
        for key, a in arrays.items():
            kind, _, name = key.partition("/")
            (st.m if kind == "m" else st.v)[name] = np.array(a, dtype=np.float64)
        return st


def adamw_step(
    params: OptimizerParams,
    state: AdamWState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """One AdamW update in place.

    Decoupled decay: p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
    """
    b1, b2 = cfg.betas
    grads: dict[str, np.ndarray] = {}
    for name in params.names():
        g = params.tensors[name].grad
        if g is None:
            raise GraphError(f"adamw_step: no gradient for trainable parameter '{name}'")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"adamw_step: non-finite gradient for parameter '{name}'")
        grads[name] = g

    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params.tensors[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * (g * g) if v is None else b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = np.asarray(m, dtype=np.float64)
        state.v[name] = np.asarray(v, dtype=np.float64)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        wd = params.weight_decay.get(name, 0.0)
        p.data = np.asarray(p.data * (1.0 - lr * wd) - lr * update, dtype=np.float64)
        p.grad = None
