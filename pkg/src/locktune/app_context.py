from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from rich.console import Console

from .config.loader import load_lab_config
from .config.models import LabConfig
from .events.store import EventStore
from .util.fs import ensure_dir


@dataclass
class RunContext:
    """Where a run writes, what it runs with and how it reports."""

    out_dir: Path
    config: LabConfig
    events: EventStore
    console: Console = field(default_factory=Console)
    trace: bool = False
    config_sources: list[Path] = field(default_factory=list)

    def emit(self, event_type: str, data: dict[str, Any], *, echo: bool = False) -> None:
        self.events.append(event_type, data)
        if self.trace or echo:
            body = " ".join(f"{k}={_fmt(v)}" for k, v in data.items())
            self.console.print(f"[dim]{event_type}[/dim] {body}")

    def child(self, out_dir: Path, config: LabConfig | None = None) -> "RunContext":
        """Quiet context for a sub-run (sweep cell, pretraining) with its own log."""
        return replace(
            self,
            out_dir=ensure_dir(out_dir),
            config=config or self.config,
            events=EventStore.open(out_dir),
            trace=False,
        )

    @staticmethod
    def create(out_dir: Path, config: LabConfig, *, console: Console | None = None, trace: bool = False) -> "RunContext":
        out_dir = ensure_dir(out_dir.expanduser().resolve())
        return RunContext(
            out_dir=out_dir,
            config=config,
            events=EventStore.open(out_dir),
            console=console or Console(),
            trace=trace,
        )

    @staticmethod
    def from_env(
        cwd: Path,
        out_dir: Path,
        config_path: Path | None = None,
        overrides: Iterable[str] = (),
        trace: bool = False,
        console: Console | None = None,
    ) -> "RunContext":
        cfg, sources = load_lab_config(cwd=cwd, explicit_path=config_path, overrides=overrides)
        ctx = RunContext.create(out_dir, cfg, console=console, trace=trace)
        ctx.config_sources = sources
        return ctx


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
