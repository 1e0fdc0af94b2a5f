"""Frame images and the binary container formats shared by all artifacts.

Model-style containers (networks, embeddings, pose regressors) share one
layout::

    magic (8 bytes) | u32 version | u32 header length | JSON header | f32 blobs

The header lists each blob's name and shape; blobs follow in that order as
little-endian float32, row-major. The feature matrix file has its own layout
(see :func:`write_features`).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
FEATURE_MAGIC = b"RSTVFEAT"


class FormatError(ValueError):
    pass


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    """Binary P5 PGM. ``image`` is float in [0, 1]."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    q = np.rint(img * maxval)
    h, w = img.shape
    if maxval < 256:
        data = q.astype(np.uint8).tobytes()
    else:
        data = q.astype(">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(data)


def _pgm_tokens(raw: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(raw, 4)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    pixels = np.frombuffer(raw, dtype=dtype, count=w * h, offset=offset)
    return pixels.reshape(h, w).astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    """Grayscale float image in [0, 1] from PGM (P5) or 8/16-bit PNG."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    from PIL import Image

    from rstv.core import to_gray

    with Image.open(path) as im:
        arr = np.asarray(im)
        if arr.ndim == 3:
            arr = to_gray(arr[..., :3])
            return arr / 255.0
        if arr.dtype == np.uint16 or im.mode.startswith("I"):
            return arr.astype(np.float64) / 65535.0
        return arr.astype(np.float64) / 255.0


def write_container(path, magic: bytes, header: dict, blobs: dict) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    header = dict(header)
    header["blobs"] = [[name, list(np.shape(arr))] for name, arr in blobs.items()]
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(head)))
        fh.write(head)
        for arr in blobs.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_container(path, magic: bytes):
    raw = Path(path).read_bytes()
    if raw[:8] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {raw[:8]!r}")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    header = json.loads(raw[16:16 + hlen])
    offset = 16 + hlen
    blobs = {}
    for name, shape in header.pop("blobs"):
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        blobs[name] = arr.reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, blobs


def write_features(path, matrix: np.ndarray, footer: dict) -> None:
    """``RSTVFEAT`` | u32 version | u32 rows | u32 cols | f32 data | JSON footer."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())
        fh.write(json.dumps(footer, sort_keys=True).encode())


def read_features(path):
    raw = Path(path).read_bytes()
    if raw[:8] != FEATURE_MAGIC:
        raise FormatError(f"{path}: not a feature file")
    version, rows, cols = struct.unpack_from("<III", raw, 8)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n = rows * cols
    m = np.frombuffer(raw, dtype="<f4", count=n, offset=20).reshape(rows, cols)
    footer = json.loads(raw[20 + 4 * n:] or b"{}")
    return m.astype(np.float32), footer
