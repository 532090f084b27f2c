from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..encoders.archive import load_archive, save_archive
from ..errors import CheckpointError
from ..util.fs import write_json_atomic
from .optim import AdamWState

STATE_FILE = "state.json"
MOMENTS_FILE = "moments.lockt"


def new_rng(seed: int) -> np.random.Generator:
    # stream 7 keeps augmentation draws apart from init and shuffle streams
    return np.random.default_rng([seed, 7])


def rng_from_state(state: dict[str, Any]) -> np.random.Generator:
    bit_gen = getattr(np.random, state.get("bit_generator", "PCG64"))()
    bit_gen.state = state
    return np.random.Generator(bit_gen)


@dataclass
class TrainState:
    """Everything besides the weights needed to continue a run exactly."""

    step: int
    logit_scale: float
    rng_state: dict[str, Any]
    config_hash: str
    text_checksum: str
    best_val_loss: float | None = None
    best_step: int | None = None
    diverge_streak: int = 0
    optimizer: AdamWState = field(default_factory=AdamWState)

    def scalars(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("optimizer")
        d["optimizer_step"] = self.optimizer.step
        return d

    def save(self, ckpt_dir: Path) -> None:
        save_archive(ckpt_dir / MOMENTS_FILE, self.optimizer.arrays(), meta={"step": self.step})
        # json writes floats with repr, which round-trips float64 exactly
        write_json_atomic(ckpt_dir / STATE_FILE, self.scalars())

    @staticmethod
    def load(ckpt_dir: Path) -> "TrainState":
        path = ckpt_dir / STATE_FILE
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CheckpointError(f"no train state at {path}") from None
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}: {e}") from e
        try:
            arc = load_archive(ckpt_dir / MOMENTS_FILE)
            return TrainState(
                step=int(obj["step"]),
                logit_scale=float(obj["logit_scale"]),
                rng_state=dict(obj["rng_state"]),
                config_hash=str(obj["config_hash"]),
                text_checksum=str(obj["text_checksum"]),
                best_val_loss=None if obj.get("best_val_loss") is None else float(obj["best_val_loss"]),
                best_step=None if obj.get("best_step") is None else int(obj["best_step"]),
                diverge_streak=int(obj.get("diverge_streak", 0)),
                optimizer=AdamWState.from_arrays(int(obj.get("optimizer_step", obj["step"])), arc.arrays),
            )
        except KeyError as e:
            raise CheckpointError(f"{path}: missing field {e}") from None
