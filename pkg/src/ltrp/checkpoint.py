"""Versioned binary checkpoint files shared by all trainable models.

Layout: magic string ``LTRPCKPT``, little-endian uint32 format version,
uint32 length-prefixed canonical-JSON config, uint32 array count, then the
named arrays sorted by name (uint16 name length + utf-8 name, uint8 dtype
string length + ascii dtype, uint8 ndim, uint32 dims, raw C-order bytes).
Loading against a different config is an error.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "check_config"]

MAGIC = b"LTRPCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _canonical_json(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = _canonical_json(config)
    blob += struct.pack("<I", len(cfg)) + cfg
    blob += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        blob += struct.pack("<H", len(name_b)) + name_b
        blob += struct.pack("<B", len(dtype_b)) + dtype_b
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(MAGIC)

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals[0] if len(vals) == 1 else vals

    version = take("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    cfg_len = take("<I")
    config = json.loads(data[off : off + cfg_len].decode("utf-8"))
    off += cfg_len
    count = take("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = take("<H")
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        dtype_len = take("<B")
        dtype = np.dtype(data[off : off + dtype_len].decode("ascii"))
        off += dtype_len
        ndim = take("<B")
        shape = tuple(take("<I") for _ in range(ndim))
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        arrays[name] = np.frombuffer(
            data, dtype=dtype, count=int(np.prod(shape)) if shape else 1, offset=off
        ).reshape(shape).copy()
        off += nbytes
    return config, arrays


def check_config(expected: dict, found: dict, path) -> None:
    if _canonical_json(expected) != _canonical_json(found):
        raise CheckpointError(
            f"{path}: checkpoint config does not match the requested config"
        )
