"""Checkpoint files.

Layout: a magic line, one line of JSON describing every array
(name, shape, byte offset into the payload) plus free-form metadata, then
the payload of little-endian float64 values.
"""
import json
import os
import tempfile

import numpy as np

from ..errors import ParseError

MAGIC = b"SUPERCUT-CKPT 1\n"


def save_arrays(path, arrays, meta=None):
    entries, offset = [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True, separators=(",", ":"))
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in arrays.values())
    atomic_write(path, MAGIC + header.encode("utf-8") + b"\n" + payload)


def load_arrays(path):
    """Return ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ParseError(f"{path}: not a checkpoint file", 0)
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise ParseError(f"{path}: unterminated header", len(MAGIC))
    try:
        header = json.loads(data[len(MAGIC) : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad header ({exc})", len(MAGIC)) from None
    payload = memoryview(data)[end + 1 :]
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        start = entry["offset"]
        stop = start + int(np.prod(shape, dtype=np.int64)) * 8
        if stop > len(payload):
            raise ParseError(f"{path}: array {entry['name']!r} runs past end of file", end + 1 + start)
        arrays[entry["name"]] = np.frombuffer(payload[start:stop], dtype="<f8").astype(np.float64).reshape(shape)
    return arrays, header.get("meta", {})


def atomic_write(path, data):
    """Write bytes to ``path`` via a temp file in the same directory and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
