"""Reader and writer for the ``.lpci`` tensor container.

Layout (all integers little-endian)::

    b"LPCI" | u32 version | u32 header_len | header (UTF-8 JSON) | payload

The header holds ``dtype`` (always ``"float32"``), ``shape`` and an ``attrs``
object of named key-values. The payload is the row-major little-endian float32
tensor, ``prod(shape) * 4`` bytes long.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError

MAGIC = b"LPCI"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def dumps(array, attrs=None) -> bytes:
    data = np.ascontiguousarray(array, dtype="<f4")
    header = {"dtype": "float32", "shape": list(data.shape), "attrs": attrs or {}}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(raw)) + raw + data.tobytes()


def loads(blob: bytes) -> tuple[np.ndarray, dict]:
    if len(blob) < _PREFIX.size:
        raise FormatError("lpci: file shorter than fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"lpci: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"lpci: unsupported version {version}")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise FormatError("lpci: truncated header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"lpci: unreadable header ({exc})") from None
    if header.get("dtype") != "float32" or "shape" not in header:
        raise FormatError("lpci: header must carry dtype=float32 and shape")
    shape = tuple(int(s) for s in header["shape"])
    payload = blob[start + hlen:]
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(payload) != expected:
        raise FormatError(
            f"lpci: payload is {len(payload)} bytes, shape {shape} needs {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return data, header.get("attrs", {})


def save(path, array, attrs=None) -> None:
    try:
        Path(path).write_bytes(dumps(array, attrs))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def load(path) -> tuple[np.ndarray, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return loads(blob)


def pack_named(arrays: dict[str, np.ndarray]) -> tuple[np.ndarray, list[dict]]:
    """Flatten named arrays into one float32 vector plus an index table."""
    index, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float32)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.ravel())
        offset += arr.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0, np.float32)
    return flat, index


def unpack_named(flat: np.ndarray, index: list[dict]) -> dict[str, np.ndarray]:
    out = {}
    for entry in index:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64))
        start = int(entry["offset"])
        if start + size > flat.size:
            raise FormatError(f"lpci: entry {entry['name']!r} runs past payload")
        out[entry["name"]] = flat[start:start + size].reshape(shape).copy()
    return out
