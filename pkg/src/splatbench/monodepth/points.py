"""Pixel selection, unprojection, camera selection and floater filtering."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2

from ..core import Camera, InvalidInputError, PointCloud


def select_cameras(cameras: Sequence[Camera], limit: int = 300, seed: int = 0) -> list:
    """At most ``limit`` cameras: k-means over flattened extrinsics, nearest member per cluster.

    Clusters that end up empty or share a representative are topped up with
    the remaining cameras farthest from the current selection, so the result
    always has ``min(len(cameras), limit)`` entries.
    """
    if limit < 1:
        raise InvalidInputError("camera limit must be >= 1")
    cameras = list(cameras)
    if len(cameras) <= limit:
        return cameras
    data = np.stack([c.world_to_camera.reshape(-1) for c in cameras])
    centroids, labels = kmeans2(data, limit, minit="++", rng=np.random.default_rng(seed))
    chosen = []
    for k in range(limit):
        members = np.flatnonzero(labels == k)
        if len(members):
            dist = np.linalg.norm(data[members] - centroids[k], axis=1)
            chosen.append(int(members[np.argmin(dist)]))
    chosen = sorted(set(chosen))
    while len(chosen) < limit:
        rest = np.setdiff1d(np.arange(len(cameras)), chosen)
        gap = np.min(np.linalg.norm(data[rest][:, None] - data[chosen][None], axis=2), axis=1)
        chosen = sorted(chosen + [int(rest[np.argmax(gap)])])
    return [cameras[i] for i in chosen]


def iqr_clamp(values: np.ndarray) -> np.ndarray:
    q1, q3 = np.percentile(values, [25, 75])
    iqr = q3 - q1
    return np.clip(values, q1 - 1.5 * iqr, q3 + 1.5 * iqr)


def subsample_factors(depth: np.ndarray, d_min: float = 5, d_max: float = 15) -> np.ndarray:
    """Per-pixel subsample factor in ``[d_min, d_max]``, growing with (clamped) depth."""
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    factors = np.full(depth.shape, float(d_min))
    if not valid.any():
        return factors
    clamped = iqr_clamp(depth[valid])
    lo, hi = clamped.min(), clamped.max()
    norm = np.zeros_like(clamped) if hi <= lo else (clamped - lo) / (hi - lo)
    factors[valid] = d_min + norm * (d_max - d_min)
    return factors


def mask_from_factors(factors: np.ndarray) -> np.ndarray:
    """Keep pixel ``(i, j)`` when both indices are multiples of its floored factor."""
    step = np.floor(factors).astype(np.int64)
    i, j = np.indices(factors.shape)
    return (i % step == 0) & (j % step == 0)


def adaptive_subsample_mask(depth: np.ndarray, d_min: float = 5, d_max: float = 15) -> np.ndarray:
    if d_min < 1 or d_max < d_min:
        raise InvalidInputError("need 1 <= d_min <= d_max")
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    return mask_from_factors(subsample_factors(depth, d_min, d_max)) & valid


def depth_gradient_mask(depth: np.ndarray, rel_thresh: float = 0.05) -> np.ndarray:
    """True where the finite-difference depth gradient, relative to depth, stays below ``rel_thresh``."""
    if rel_thresh <= 0:
        raise InvalidInputError("rel_thresh must be > 0")
    depth = np.asarray(depth, dtype=np.float64)
    gi, gj = np.gradient(depth)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.maximum(np.abs(gi), np.abs(gj)) / depth
    return np.isfinite(rel) & (rel <= rel_thresh) & (depth > 0)


def unproject(camera: Camera, depth: np.ndarray, mask: np.ndarray, image: Optional[np.ndarray] = None) -> PointCloud:
    """World points for the selected pixels (column ``j`` at ``u = j``, row ``i`` at ``v = i``)."""
    rows, cols = np.nonzero(mask)
    d = np.asarray(depth, dtype=np.float64)[rows, cols]
    pc = np.stack([d * (cols - camera.cx) / camera.fx, d * (rows - camera.cy) / camera.fy, d], axis=1)
    world = (pc - camera.translation) @ camera.rotation
    if image is None:
        colors = np.full((len(d), 3), 0.5)
    else:
        colors = np.asarray(image, dtype=np.float64)[rows, cols, :3]
    return PointCloud(world, colors)


def floater_votes(points: PointCloud, cameras: Sequence[Camera], depths: dict, tau: float = 0.1):
    """Per-point counts of floater and non-floater votes over ``cameras``."""
    floater = np.zeros(len(points), dtype=np.int64)
    solid = np.zeros(len(points), dtype=np.int64)
    for cam in cameras:
        depth = np.asarray(depths[cam.id], dtype=np.float64)
        uv, z = cam.project(points.positions)
        cols = np.rint(uv[:, 0])
        rows = np.rint(uv[:, 1])
        seen = (z > 0) & np.isfinite(cols) & np.isfinite(rows)
        seen &= (cols >= 0) & (cols < cam.width) & (rows >= 0) & (rows < cam.height)
        idx = np.flatnonzero(seen)
        surf = depth[rows[idx].astype(np.int64), cols[idx].astype(np.int64)]
        ok = np.isfinite(surf) & (surf > 0)
        idx, surf = idx[ok], surf[ok]
        front = z[idx] < (1.0 - tau) * surf
        floater[idx[front]] += 1
        solid[idx[~front]] += 1
    return floater, solid


def remove_floaters(
    points: PointCloud,
    cameras: Sequence[Camera],
    depths: dict,
    tau: float = 0.1,
    ratio_thresh: float = 0.6,
) -> PointCloud:
    """Drop points that most observing cameras see well in front of their depth surface."""
    floater, solid = floater_votes(points, cameras, depths, tau)
    total = floater + solid
    ratio = np.where(total > 0, floater / np.maximum(total, 1), 0.0)
    return points.take(np.flatnonzero(ratio <= ratio_thresh))
