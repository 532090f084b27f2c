from __future__ import annotations

import json
import time
import uuid
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from platformdirs import user_data_dir

from ..util.fs import append_line, ensure_dir

APP_NAME = "locktune"
EVENTS_FILE = "events.jsonl"

EVENT_TYPES = (
    "corpus.generated",
    "pretrain.start",
    "pretrain.step",
    "pretrain.end",
    "train.start",
    "train.step",
    "train.checkpoint",
    "train.resume",
    "train.diverged",
    "train.end",
    "eval.report",
    "sweep.cell",
    "sweep.check",
)


def _events_dir() -> Path:
    return ensure_dir(Path(user_data_dir(APP_NAME)) / "events")


@dataclass
class Event:
    ts: float
    type: str
    data: dict[str, Any]


@dataclass
class EventStore:
    """JSON-lines event log for one run directory.

    Append-only and tolerant of partial corruption: a line cut short by a
    crash is skipped on read.
    """

    path: Path

    @staticmethod
    def open(run_dir: Path | None = None) -> "EventStore":
        if run_dir is None:
            path = _events_dir() / f"{uuid.uuid4().hex[:12]}.jsonl"
        else:
            path = ensure_dir(run_dir) / EVENTS_FILE
        return EventStore(path=path)

    def append(self, event_type: str, data: dict[str, Any]) -> None:
        ev = Event(ts=time.time(), type=event_type, data=data)
        append_line(self.path, json.dumps(ev.__dict__, ensure_ascii=False, default=_json_default))

    def iter_events(self, types: Iterable[str] | None = None) -> list[Event]:
        if not self.path.exists():
            return []
        wanted = set(types) if types is not None else None
        out: list[Event] = []
        for line in self.path.read_text(encoding="utf-8", errors="replace").splitlines():
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ev = Event(ts=float(obj.get("ts", 0.0)), type=str(obj.get("type")), data=obj.get("data") or {})
            except Exception:
                continue
            if wanted is None or ev.type in wanted:
                out.append(ev)
        return out


def _json_default(o: Any) -> Any:
    # numpy scalars and paths show up in event payloads
    if hasattr(o, "item"):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


@dataclass
class RunStats:
    counts: dict[str, int] = field(default_factory=dict)
    steps: int = 0
    last_loss: float | None = None
    last_logit_scale: float | None = None
    collisions: int = 0
    checkpoints: list[int] = field(default_factory=list)
    divergences: int = 0
    resumes: int = 0
    evals: list[dict[str, Any]] = field(default_factory=list)
    failed_checks: list[str] = field(default_factory=list)


def summarize(events: Iterable[Event]) -> RunStats:
    """Fold a run's events into the numbers `locktune stats` prints."""
    st = RunStats()
    counts: Counter[str] = Counter()
    for ev in events:
        counts[ev.type] += 1
        if ev.type == "train.step":
            st.steps = max(st.steps, int(ev.data.get("step", 0)))
            st.last_loss = ev.data.get("loss", st.last_loss)
            st.last_logit_scale = ev.data.get("logit_scale", st.last_logit_scale)
            st.collisions += int(ev.data.get("collisions", 0))
        elif ev.type == "train.checkpoint":
            st.checkpoints.append(int(ev.data.get("step", 0)))
        elif ev.type == "train.diverged":
            st.divergences += 1
        elif ev.type == "train.resume":
            st.resumes += 1
        elif ev.type == "eval.report":
            st.evals.append(ev.data)
        elif ev.type == "sweep.check" and ev.data.get("passed") is False:
            st.failed_checks.append(str(ev.data.get("name")))
    st.counts = dict(sorted(counts.items()))
    return st
