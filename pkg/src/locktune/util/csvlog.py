from __future__ import annotations

import csv
import hashlib
import io
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..errors import LockTuneError
from .fs import append_line, ensure_dir, write_text_atomic


def _header_line(fields: Sequence[str]) -> str:
    return ",".join(fields)


def header_hash(fields: Sequence[str]) -> str:
    return hashlib.sha256(_header_line(fields).encode("utf-8")).hexdigest()


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".header.sha256")


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def append_rows(path: Path, fields: Sequence[str], rows: Sequence[Mapping[str, Any]]) -> None:
    """Append rows to an append-only CSV.

    The first write creates the header and a `<name>.header.sha256` sidecar;
    later writes refuse to append under a different header.
    """
    ensure_dir(path.parent)
    expected = header_hash(fields)
    if path.exists():
        side = _sidecar(path)
        first = path.read_text(encoding="utf-8").split("\n", 1)[0]
        stored = side.read_text(encoding="utf-8").strip() if side.exists() else None
        if first != _header_line(fields) or stored not in (None, expected):
            raise LockTuneError(f"{path}: header does not match ({first!r}); write to a new results file")
    else:
        write_text_atomic(path, _header_line(fields) + "\n")
        write_text_atomic(_sidecar(path), expected + "\n")
    for row in rows:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow([_fmt(row.get(f)) for f in fields])
        append_line(path, buf.getvalue())


def read_rows(path: Path) -> list[dict[str, str]]:
    if not path.is_file():
        return []
    with path.open("r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
