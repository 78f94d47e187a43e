"""Versioned binary container used for checkpoints and fused-data caches.

Byte layout (all integers little-endian)::

    offset 0      magic line, ASCII, terminated by "\\n" (e.g. b"FALLFUSE-CKPT-1\\n")
    next 8 bytes  uint64 M: length of the manifest in bytes
    next M bytes  manifest: UTF-8 JSON, keys sorted, no whitespace
    rest          array payload: each array's raw bytes, row-major, in the
                  order listed in manifest["arrays"]

Each ``manifest["arrays"]`` entry is ``{"name", "dtype", "shape", "offset",
"nbytes"}`` where ``dtype`` is ``"<f8"`` or ``"<i8"`` and ``offset`` counts
from the first payload byte. Nothing time- or host-dependent is written, so
identical inputs produce identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DecodeError

_DTYPES = {"f": "<f8", "i": "<i8", "u": "<i8", "b": "<i8"}


def write_container(path, magic: str, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = _DTYPES.get(arr.dtype.kind)
        if dtype is None:
            raise TypeError(f"array {name!r} has unsupported dtype {arr.dtype}")
        data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    body = dict(manifest)
    body["arrays"] = entries
    header = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(magic.encode("ascii") + b"\n")
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    expected = magic.encode("ascii") + b"\n"
    if not raw.startswith(expected):
        found = raw[:len(expected)].split(b"\n")[0][:40]
        raise DecodeError(f"{path}: bad magic {found!r}, expected {magic!r}")
    pos = len(expected)
    if len(raw) < pos + 8:
        raise DecodeError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    try:
        manifest = json.loads(raw[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"{path}: unreadable manifest: {exc}") from exc
    payload = memoryview(raw)[pos + mlen:]
    arrays = {}
    for e in manifest.get("arrays", []):
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise DecodeError(f"{path}: array {e['name']!r} runs past end of file")
        arr = np.frombuffer(payload[e["offset"]:end], dtype=e["dtype"]).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(np.float64 if e["dtype"] == "<f8" else np.int64)
    return manifest, arrays
