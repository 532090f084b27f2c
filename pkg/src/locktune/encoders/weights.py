from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from ..errors import CheckpointError, ConfigError
from ..tensor import Tensor


@dataclass
class TowerWeights:
    """Named parameters of one tower plus their "came from a pretrained
    checkpoint" flags. Names are the stable identity used by checkpoints."""

    params: dict[str, Tensor] = field(default_factory=dict)
    pretrained: dict[str, bool] = field(default_factory=dict)

    @staticmethod
    def from_arrays(
        arrays: Mapping[str, np.ndarray],
        pretrained: Mapping[str, bool] | None = None,
        *,
        requires_grad: bool = True,
    ) -> "TowerWeights":
        flags = dict(pretrained or {})
        params = {n: Tensor(a, requires_grad=requires_grad, name=n) for n, a in sorted(arrays.items())}
        return TowerWeights(params=params, pretrained={n: bool(flags.get(n, False)) for n in params})

    def add(self, name: str, value: np.ndarray, *, pretrained: bool = False) -> None:
        if name in self.params:
            raise CheckpointError(f"duplicate parameter name: {name}")
        self.params[name] = Tensor(value, requires_grad=True, name=name)
        self.pretrained[name] = pretrained

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.params[name]
        except KeyError:
            raise CheckpointError(f"missing parameter '{name}'") from None

    def __contains__(self, name: object) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return sorted(self.params)

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: self.params[n].data for n in self.names()}

    @property
    def frozen(self) -> bool:
        return bool(self.params) and not any(t.requires_grad for t in self.params.values())

    def freeze(self) -> "TowerWeights":
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None
        return self

    def unfreeze(self) -> "TowerWeights":
        for t in self.params.values():
            t.requires_grad = True
        return self

    def mark_pretrained(self) -> "TowerWeights":
        self.pretrained = {n: True for n in self.params}
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for n in self.names():
            a = self.params[n].data
            h.update(n.encode("utf-8"))
            h.update(repr(a.shape).encode("ascii"))
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def select(self, prefix: str) -> "TowerWeights":
        """Subset sharing the same Tensor objects."""
        keep = [n for n in self.names() if n.startswith(prefix)]
        return TowerWeights(
            params={n: self.params[n] for n in keep},
            pretrained={n: self.pretrained.get(n, False) for n in keep},
        )

    def without(self, prefix: str) -> "TowerWeights":
        keep = [n for n in self.names() if not n.startswith(prefix)]
        return TowerWeights(
            params={n: self.params[n] for n in keep},
            pretrained={n: self.pretrained.get(n, False) for n in keep},
        )

    def overlay(self, source: "TowerWeights") -> list[str]:
        """Copy every parameter of `source` that exists here, keeping this
        tower's grad flags and taking the source's pretrained flags.
        Returns the overwritten names."""
        done: list[str] = []
        for n in source.names():
            if n not in self.params:
                continue
            dst, src = self.params[n], source.params[n]
            if dst.shape != src.shape:
                raise CheckpointError(f"overlay: '{n}' has shape {src.shape}, expected {dst.shape}")
            dst.data = src.data.copy()
            self.pretrained[n] = source.pretrained.get(n, False)
            done.append(n)
        return done

    def copy(self) -> "TowerWeights":
        return TowerWeights(
            params={
                n: Tensor(t.data, requires_grad=t.requires_grad, name=n) for n, t in self.params.items()
            },
            pretrained=dict(self.pretrained),
        )

    def num_params(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def expect_shapes(self, shapes: Mapping[str, tuple[int, ...]], *, what: str) -> None:
        for n, shape in shapes.items():
            if n not in self.params:
                raise ConfigError(f"{what}: weights lack '{n}'")
            if self.params[n].shape != tuple(shape):
                raise ConfigError(
                    f"{what}: '{n}' has shape {self.params[n].shape}, config expects {tuple(shape)}"
                )


def normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)
