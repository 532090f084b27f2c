from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any

from ..errors import LockTuneError


class FsError(LockTuneError):
    pass


def resolve_path(cwd: Path, path_str: str | Path) -> Path:
    p = Path(path_str).expanduser()
    if not p.is_absolute():
        p = cwd / p
    return p.resolve()


def ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise FsError(f"cannot create directory {path}: {e}") from e
    return path


def _fsync(f: Any) -> None:
    f.flush()
    try:
        os.fsync(f.fileno())
    except OSError:
        # Best-effort: some filesystems may not support fsync.
        pass


def write_bytes_atomic(path: Path, data: bytes) -> None:
    """Write to a sibling temp file and rename over `path`.

    Readers see either the old file or the complete new one.
    """
    ensure_dir(path.parent)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            _fsync(f)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_text_atomic(path: Path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def write_json_atomic(path: Path, obj: Any) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def append_line(path: Path, line: str) -> None:
    """Append one line with flush + fsync so a crash loses at most that line."""
    ensure_dir(path.parent)
    with path.open("a", encoding="utf-8") as f:
        f.write(line.rstrip("\n") + "\n")
        _fsync(f)


def read_text(path: Path) -> str:
    return path.read_text(encoding="utf-8", errors="replace")


def read_json(path: Path) -> Any:
    try:
        return json.loads(read_text(path))
    except FileNotFoundError as e:
        raise FsError(f"missing file: {path}") from e
    except json.JSONDecodeError as e:
        raise FsError(f"{path}: invalid JSON: {e}") from e
