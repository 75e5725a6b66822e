"""Minimal binary PGM (P5) image output, codec-free and byte-deterministic."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2D uint8 array as a binary PGM file."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("image must be a 2D uint8 array")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM file")
    parts = data.split(b"\n", 3)
    width, height = (int(tok) for tok in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only 8-bit PGM supported")
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    return pixels.reshape(height, width).copy()


def to_gray(values: np.ndarray) -> np.ndarray:
    """Scale a nonnegative float array to uint8, 255 at the array maximum."""
    vals = np.asarray(values, dtype=np.float64)
    top = vals.max()
    if top <= 0:
        return np.zeros(vals.shape, dtype=np.uint8)
    return np.clip(np.round(vals / top * 255.0), 0, 255).astype(np.uint8)
