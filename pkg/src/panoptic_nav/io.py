"""Binary PGM read/write (P5, 8- or 16-bit)."""

from __future__ import annotations

import os
import re

import numpy as np

_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s")


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images are 2D")
    if img.dtype == np.uint8:
        maxval, raw = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, raw = 65535, img.astype(">u2").tobytes()
    else:
        raise ValueError(f"unsupported PGM dtype {img.dtype}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(raw)


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data = open(path, "rb").read()
    m = _HEADER.match(data)
    if not m:
        raise ValueError(f"{path}: not a binary PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=m.end()).reshape(h, w).astype(
        np.uint8 if maxval < 256 else np.uint16)


def depth_to_pgm(depth: np.ndarray) -> np.ndarray:
    """Metres to 16-bit millimetres."""
    return np.clip(np.round(np.asarray(depth) * 1000.0), 0, 65535).astype(np.uint16)


def unit_to_pgm(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
