"""Shared chunked-binary container for checkpoints and embedding files.

Layout: 8-byte magic ``IFCKPT01``, an unsigned 64-bit little-endian length,
that many bytes of UTF-8 JSON header, then raw little-endian tensor
payloads back to back in index order. The header is
``{"config": {...}, "tensors": {name: {"offset": int, "shape": [...],
"dtype": "f32"|"f64"}}}`` with offsets relative to the end of the header.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"IFCKPT01"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str, config: dict, tensors: dict[str, np.ndarray]):
    """Write atomically (temp file + rename)."""
    index = {}
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_NAMES:
            arr = arr.astype(np.float64 if arr.dtype == np.float64 else np.float32)
        blob = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        index[name] = {"offset": offset, "shape": list(arr.shape), "dtype": _DTYPE_NAMES[arr.dtype]}
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"config": config, "tensors": index}).encode("utf-8")
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for blob in blobs:
                f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (config, tensors); format errors report the byte offset."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0 (expected {MAGIC!r})")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated at byte {len(raw)} (header length missing)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header at byte {len(raw)} (need {16 + hlen})")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt JSON header: {e}") from e
    payload = raw[16 + hlen:]
    tensors = {}
    for name, meta in header.get("tensors", {}).items():
        dtype = _DTYPES.get(meta["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype {meta['dtype']!r} for tensor '{name}'")
        count = int(np.prod(meta["shape"])) if meta["shape"] else 1
        start, end = meta["offset"], meta["offset"] + count * dtype.itemsize
        if end > len(payload):
            raise CheckpointError(
                f"{path}: truncated payload for tensor '{name}' at byte {16 + hlen + len(payload)} "
                f"(need {16 + hlen + end})")
        arr = np.frombuffer(payload[start:end], dtype=dtype).reshape(meta["shape"])
        tensors[name] = arr.astype(dtype.newbyteorder("=")).copy()
    return header.get("config", {}), tensors
