"""Binary (P5) greyscale PGM read/write, maxval 255."""
from __future__ import annotations

import numpy as np


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2-d array, got shape {list(pixels.shape)}")
    if pixels.dtype != np.uint8:
        raise ValueError("PGM pixels must be uint8")
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w)


def scale_to_bytes(plane: np.ndarray) -> np.ndarray:
    """Map a non-negative plane to 0..255 by ``round(255 * v / max)``; zeros stay zero."""
    plane = np.asarray(plane, dtype=np.float64)
    if not np.all(np.isfinite(plane)):
        raise ValueError("plane contains non-finite values")
    if np.any(plane < 0):
        raise ValueError("plane must be non-negative")
    peak = plane.max() if plane.size else 0.0
    if peak == 0:
        return np.zeros(plane.shape, dtype=np.uint8)
    return np.floor(255.0 * plane / peak + 0.5).astype(np.uint8)
