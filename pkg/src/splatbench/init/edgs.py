"""Binary interchange for externally produced dense Gaussian initialisations."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import GaussianCloud, InvalidInputError, num_sh_coeffs

MAGIC = b"EDGS"
VERSION = 1
HEADER = struct.Struct("<4sIQI")


def _record_width(sh_degree: int) -> int:
    return 3 + 3 + 4 + 1 + 3 * num_sh_coeffs(sh_degree)


def write_edgs(path, cloud: GaussianCloud) -> None:
    n = len(cloud)
    rec = np.concatenate(
        [
            cloud.means,
            cloud.log_scales,
            cloud.rotations,
            cloud.opacity_logits[:, None],
            cloud.sh_coeffs.reshape(n, -1),
        ],
        axis=1,
    ).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, n, cloud.sh_degree))
        fh.write(rec.tobytes())


def read_edgs(path) -> GaussianCloud:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise InvalidInputError(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, version, count, degree = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise InvalidInputError(f"{path}: unsupported version {version}")
    if degree > 3:
        raise InvalidInputError(f"{path}: SH degree {degree} out of range")
    width = _record_width(degree)
    expected = HEADER.size + 4 * width * count
    if len(data) != expected:
        raise InvalidInputError(f"{path}: expected {expected} bytes for {count} records, found {len(data)}")
    rec = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(count, width).astype(np.float64)
    k = num_sh_coeffs(degree)
    return GaussianCloud(
        rec[:, 0:3].copy(),
        rec[:, 3:6].copy(),
        rec[:, 6:10].copy(),
        rec[:, 10].copy(),
        rec[:, 11:].reshape(count, k, 3).copy(),
    )


def edgs_scale_multiplier(file_size: int, target: int) -> float:
    """Extent growth that keeps coverage when thinning ``file_size`` splats to ``target``."""
    return file_size / target if target < file_size else 1.0


def import_edgs(path, target: Optional[int] = None, seed: int = 0) -> GaussianCloud:
    """Load a dense initialisation, thinning it to ``target`` rows with enlarged splats."""
    if target is not None and target <= 0:
        raise InvalidInputError("EDGS import target must be positive")
    cloud = read_edgs(path)
    if target is None or target >= len(cloud):
        return cloud
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(cloud), size=target, replace=False))
    out = cloud.take(idx)
    out.log_scales = np.log(out.scales * edgs_scale_multiplier(len(cloud), target))
    return out
