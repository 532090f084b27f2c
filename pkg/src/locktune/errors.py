from __future__ import annotations

from typing import Any


class LockTuneError(RuntimeError):
    pass


class ShapeError(LockTuneError, ValueError):
    pass


class NonFiniteError(LockTuneError, FloatingPointError):
    pass


class DegenerateInputError(LockTuneError, ValueError):
    pass


class GraphError(LockTuneError):
    pass


class ConfigError(LockTuneError, ValueError):
    pass


class CheckpointError(LockTuneError):
    pass


class TokenizationError(LockTuneError, ValueError):
    pass


class CorpusError(LockTuneError):
    pass


class DivergenceError(LockTuneError):
    def __init__(self, message: str, report: dict[str, Any]):
        super().__init__(message)
        self.report = report
