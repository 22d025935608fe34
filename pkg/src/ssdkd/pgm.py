"""Binary greyscale PGM (P5, maxval 255) writer and reader."""
from __future__ import annotations

import re

import numpy as np

_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def to_bytes(image, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Map [lo, hi] linearly onto 0..255, clamping anything outside."""
    image = np.asarray(image, dtype=np.float64)
    scaled = (image - lo) / (hi - lo) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def write_pgm(image) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {image.shape}")
    if image.dtype != np.uint8:
        image = to_bytes(image)
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image).tobytes()


def parse_pgm(data: bytes) -> np.ndarray:
    match = _HEADER.match(data)
    if match is None:
        raise ValueError("not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in match.groups())
    if not 0 < maxval < 256:
        raise ValueError(f"unsupported maxval {maxval}")
    start = match.end()
    if len(data) - start < w * h:
        raise ValueError(f"truncated PGM payload: need {w * h} bytes, have {len(data) - start}")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=start).reshape(h, w).copy()
