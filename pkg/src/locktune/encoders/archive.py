"""LOCKT1 tensor archive.

Layout (little-endian):

    b"LOCKT1" | u64 manifest length | UTF-8 JSON manifest | raw f64 buffers

The manifest maps each name to {dtype, shape, offset, pretrained}; offsets
count from the first byte after the manifest. Names are written sorted.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import CheckpointError
from ..util.fs import write_bytes_atomic
from .weights import TowerWeights

MAGIC = b"LOCKT1"
FORMAT = "LOCKT1"
_LEN = struct.Struct("<Q")


@dataclass
class Archive:
    arrays: dict[str, np.ndarray]
    pretrained: dict[str, bool] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)


def encode_archive(
    arrays: Mapping[str, np.ndarray],
    pretrained: Mapping[str, bool] | None = None,
    meta: Mapping[str, Any] | None = None,
) -> bytes:
    flags = pretrained or {}
    tensors: dict[str, Any] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = a.tobytes(order="C")
        tensors[name] = {
            "dtype": "f64",
            "shape": list(a.shape),
            "offset": offset,
            "pretrained": bool(flags.get(name, False)),
        }
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"format": FORMAT, "meta": dict(meta or {}), "tensors": tensors},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + _LEN.pack(len(manifest)) + manifest + b"".join(chunks)


def decode_archive(blob: bytes, *, source: str = "<bytes>") -> Archive:
    head = len(MAGIC) + _LEN.size
    if len(blob) < head or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a LOCKT1 archive (bad magic)")
    (mlen,) = _LEN.unpack_from(blob, len(MAGIC))
    if head + mlen > len(blob):
        raise CheckpointError(f"{source}: truncated manifest")
    try:
        manifest = json.loads(blob[head : head + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: unreadable manifest: {e}") from e
    if manifest.get("format") != FORMAT or not isinstance(manifest.get("tensors"), dict):
        raise CheckpointError(f"{source}: manifest is not a {FORMAT} manifest")

    body = memoryview(blob)[head + mlen :]
    arrays: dict[str, np.ndarray] = {}
    flags: dict[str, bool] = {}
    for name, ent in manifest["tensors"].items():
        if ent.get("dtype") != "f64":
            raise CheckpointError(f"{source}: '{name}' has unsupported dtype {ent.get('dtype')!r}")
        shape = tuple(int(d) for d in ent["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = int(ent["offset"])
        stop = start + 8 * count
        if start < 0 or stop > len(body):
            raise CheckpointError(f"{source}: buffer for '{name}' runs past end of file")
        arrays[name] = np.frombuffer(body[start:stop], dtype="<f8").astype(np.float64).reshape(shape)
        flags[name] = bool(ent.get("pretrained", False))
    return Archive(arrays=arrays, pretrained=flags, meta=dict(manifest.get("meta") or {}))


def save_archive(
    path: Path,
    arrays: Mapping[str, np.ndarray],
    pretrained: Mapping[str, bool] | None = None,
    meta: Mapping[str, Any] | None = None,
) -> None:
    write_bytes_atomic(path, encode_archive(arrays, pretrained, meta))


def load_archive(path: Path) -> Archive:
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"archive not found: {path}") from None
    return decode_archive(blob, source=str(path))


def save_weights(path: Path, weights: TowerWeights, meta: Mapping[str, Any] | None = None) -> None:
    save_archive(path, weights.arrays(), weights.pretrained, meta)


def load_weights(path: Path, *, requires_grad: bool = True) -> tuple[TowerWeights, dict[str, Any]]:
    arc = load_archive(path)
    return TowerWeights.from_arrays(arc.arrays, arc.pretrained, requires_grad=requires_grad), arc.meta
