"""
Flat binary checkpoints.

Layout, all integers unsigned 32-bit little-endian::

    b"ERL2" | version | entry count
    per entry: name length | utf-8 name | ndim | dims... | row-major float64 LE data
    metadata length | utf-8 JSON metadata

Parameters round-trip bit-exactly. The metadata carries the resolved run config
and counters, so a checkpoint is self-describing.
"""
import json
import os
import struct
from typing import Any, Dict, Mapping, Tuple, TypeVar

import numpy as np
from loguru import logger

from erlre2.errors import CheckpointError
from erlre2.nn import Parametric

P = TypeVar("P", bound=Parametric)

MAGIC = b"ERL2"
VERSION = 1
_U32 = struct.Struct("<I")


def pack_params(prefix: str, params: Parametric) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{i}": a for i, a in enumerate(params.arrays())}


def unpack_params(prefix: str, template: P, entries: Mapping[str, np.ndarray]) -> P:
    """
    Rebuild `template`'s type from the entries stored under `prefix`.

    :raises CheckpointError: if an entry is missing or has the wrong shape.
    """
    arrays = []
    for i, like in enumerate(template.arrays()):
        name = f"{prefix}.{i}"
        if name not in entries:
            raise CheckpointError(f"checkpoint has no entry {name!r}")
        a = entries[name]
        if a.shape != like.shape:
            raise CheckpointError(f"entry {name!r} has shape {a.shape}, expected {like.shape}")
        arrays.append(a)
    return template.with_arrays(arrays)


def dumps(entries: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> bytes:
    out = [MAGIC, _U32.pack(VERSION), _U32.pack(len(entries))]
    for name, array in entries.items():
        raw_name = name.encode("utf-8")
        array = np.asarray(array, dtype="<f8")
        out.append(_U32.pack(len(raw_name)))
        out.append(raw_name)
        out.append(_U32.pack(array.ndim))
        out.extend(_U32.pack(dim) for dim in array.shape)
        out.append(array.tobytes(order="C"))
    raw_meta = json.dumps(meta, sort_keys=True).encode("utf-8")
    out.append(_U32.pack(len(raw_meta)))
    out.append(raw_meta)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def loads(data: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    :raises CheckpointError: on bad magic, unknown version or corrupt content.
    """
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    entries: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"corrupt entry name: {e}") from e
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(8 * count)
        entries[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    try:
        meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint metadata: {e}") from e
    if reader.offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint metadata")
    return entries, meta


def save(path: str, entries: Mapping[str, np.ndarray], meta: Mapping[str, Any]):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(dumps(entries, meta))
    os.replace(tmp, path)
    logger.info("checkpoint written to {}", path)


def load(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return loads(data)
