"""Binary netpbm (PPM/PGM) and CSV readers/writers.

Images come in as float64 arrays in [0, 1] with shape (H, W, 3). Label maps
are int64 arrays of shape (H, W) and are stored as 16-bit big-endian P5
(maxval 65535) or as CSV grids.
"""
import os

import numpy as np

from .errors import ParseError, StructuralError
from .nn.checkpoint import atomic_write

_WS = b" \t\r\n\v\f"


def _parse_header(data, n_fields):
    """Read magic plus ``n_fields`` integers; return (magic, fields, payload_offset)."""
    if len(data) < 2 or data[:1] != b"P":
        raise ParseError("missing netpbm magic number", 0)
    magic = data[:2].decode("ascii", "replace")
    pos = 2
    fields = []
    while len(fields) < n_fields:
        if pos >= len(data):
            raise ParseError("truncated header", pos)
        ch = data[pos : pos + 1]
        if ch in (b"#",):
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
            continue
        if ch in _WS or ch == b"":
            pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1] not in _WS and data[pos : pos + 1] != b"#":
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise ParseError(f"expected an integer in header, found {token[:16]!r}", start)
        fields.append(int(token))
    if pos >= len(data) or data[pos : pos + 1] not in _WS:
        raise ParseError("header must end with a single whitespace byte", pos)
    return magic, fields, pos + 1


def read_netpbm(path):
    """Decode a binary P5/P6 file into an integer array and its maxval."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, (width, height, maxval), offset = _parse_header(data, 3)
    if magic not in ("P5", "P6"):
        raise ParseError(f"unsupported netpbm type {magic!r} (only binary P5/P6)", 0)
    if width < 1 or height < 1:
        raise ParseError(f"bad dimensions {width}x{height}", 3)
    if not 0 < maxval < 65536:
        raise ParseError(f"bad maxval {maxval}", offset - 1)
    channels = 3 if magic == "P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * channels * dtype.itemsize
    if len(data) - offset < need:
        raise ParseError(f"expected {need} bytes of pixel data, found {len(data) - offset}", len(data))
    arr = np.frombuffer(data, dtype=dtype, count=width * height * channels, offset=offset).astype(np.int64)
    shape = (height, width, channels) if channels == 3 else (height, width)
    return arr.reshape(shape), maxval


def read_image(path):
    """Read a P6 (or grey P5) file as an (H, W, 3) float image in [0, 1]."""
    arr, maxval = read_netpbm(path)
    img = arr.astype(np.float64) / maxval
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img


def encode_ppm(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise StructuralError(f"PPM needs an (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    pix = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def write_ppm(path, img):
    atomic_write(path, encode_ppm(img))


def encode_label_pgm(labels):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise StructuralError(f"label map must be 2-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 65535):
        raise StructuralError("labels must lie in [0, 65535] for 16-bit PGM")
    h, w = labels.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + labels.astype(">u2").tobytes()


def write_label_pgm(path, labels):
    atomic_write(path, encode_label_pgm(labels))


def write_label_csv(path, labels):
    labels = np.asarray(labels, dtype=np.int64)
    text = "\n".join(",".join(str(v) for v in row) for row in labels) + "\n"
    atomic_write(path, text.encode("ascii"))


def read_label_csv(path):
    rows = []
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0
    for lineno, raw in enumerate(data.splitlines(keepends=True), 1):
        line = raw.strip()
        if line:
            try:
                rows.append([int(tok) for tok in line.split(b",")])
            except ValueError:
                raise ParseError(f"{path}: non-integer value on line {lineno}", offset) from None
        offset += len(raw)
    if not rows:
        raise ParseError(f"{path}: empty label grid", 0)
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise StructuralError(f"{path}: row {i + 1} has {len(row)} values, expected {width}")
    arr = np.array(rows, dtype=np.int64)
    if arr.min() < 0:
        raise StructuralError(f"{path}: negative label")
    return arr


def read_label_file(path):
    """Raw (uncompacted) labels from a P5 PGM or a CSV grid."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        return read_label_csv(path)
    arr, _ = read_netpbm(path)
    if arr.ndim != 2:
        raise StructuralError(f"{path}: label maps must be single-channel P5")
    return arr
