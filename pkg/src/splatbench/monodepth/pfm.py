"""Portable float map (PFM) depth files."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..core import InvalidInputError


def write_pfm(path, data: np.ndarray) -> None:
    """Write a single-channel ``(H, W)`` or three-channel ``(H, W, 3)`` float map, little-endian."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 2:
        tag = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    else:
        raise InvalidInputError(f"PFM holds (H, W) or (H, W, 3) arrays, got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array with row 0 at the top."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise InvalidInputError(f"{path}: not a PFM file")
    channels = 3 if parts[0] == b"PF" else 1
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise InvalidInputError(f"{path}: malformed PFM header") from None
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    if len(parts[3]) < 4 * count:
        raise InvalidInputError(f"{path}: truncated PFM data")
    arr = np.frombuffer(parts[3], dtype=dtype, count=count).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return arr.reshape(shape)[::-1].copy()
