"""Aligning predicted depth to sparse SfM depth: robust affine fit and piecewise refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import Camera, InvalidInputError, PointCloud


class AlignmentError(InvalidInputError):
    pass


@dataclass
class DepthPairs:
    """SfM observations inside one image: pixel, SfM depth and predicted depth."""

    pixels: np.ndarray  # (M, 2) integer (row, col)
    sfm_depth: np.ndarray  # (M,)
    pred_depth: np.ndarray  # (M,)

    def __len__(self) -> int:
        return len(self.sfm_depth)


@dataclass
class AlignmentResult:
    scale: float
    shift: float
    inliers: np.ndarray
    iterations: int = 0
    residual_mean: float = 0.0
    residual_max: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def inlier_count(self) -> int:
        return int(np.sum(self.inliers))

    def apply(self, depth):
        return self.scale * np.asarray(depth, dtype=np.float64) + self.shift


def sfm_depth_correspondences(camera: Camera, points: PointCloud, depth: np.ndarray) -> DepthPairs:
    """Project SfM points into ``camera`` and pair their depths with the predicted map.

    A point is kept when it lies in front of the camera and its nearest
    pixel is inside the image with a finite, positive prediction.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (camera.height, camera.width):
        raise InvalidInputError(f"depth map {depth.shape} does not match camera {camera.id} ({camera.height}, {camera.width})")
    uv, z = camera.project(points.positions)
    cols = np.rint(uv[:, 0])
    rows = np.rint(uv[:, 1])
    ok = (z > 0) & np.isfinite(cols) & np.isfinite(rows)
    ok &= (cols >= 0) & (cols < camera.width) & (rows >= 0) & (rows < camera.height)
    r = rows[ok].astype(np.int64)
    c = cols[ok].astype(np.int64)
    pred = depth[r, c]
    good = np.isfinite(pred) & (pred > 0)
    return DepthPairs(np.stack([r, c], axis=1)[good], z[ok][good], pred[good])


def fit_scale_shift(d: np.ndarray, target: np.ndarray):
    """Least-squares ``(s, b)`` minimising ``sum (s d + b - target)^2``; ``None`` if degenerate."""
    n = len(d)
    sd, st = d.sum(), target.sum()
    sdd, sdt = d @ d, d @ target
    det = n * sdd - sd * sd
    if n < 2 or det <= 1e-12 * max(n * sdd, 1e-300):
        return None
    s = (n * sdt - sd * st) / det
    b = (st - s * sd) / n
    return s, b


def _inliers(s, b, d, target, thresh):
    return np.abs(s * d + b - target) <= thresh * np.maximum(np.abs(target), 1e-12)


def ransac_scale_shift(
    pairs: DepthPairs,
    samples_per_iter: int = 4,
    confidence: float = 0.999,
    inlier_thresh: float = 0.01,
    max_iters: int = 2500,
    seed: int = 0,
    lo_steps: int = 10,
) -> AlignmentResult:
    """LO-RANSAC fit of ``sfm_depth ~ s * pred_depth + b`` with a relative inlier test.

    Pairs are sorted canonically before sampling so the result does not
    depend on their input order.
    """
    n = len(pairs)
    if n < samples_per_iter:
        raise AlignmentError(f"need at least {samples_per_iter} correspondences, got {n}")
    order = np.lexsort((pairs.sfm_depth, pairs.pred_depth))
    d = pairs.pred_depth[order].astype(np.float64)
    t = pairs.sfm_depth[order].astype(np.float64)
    rng = np.random.default_rng(seed)

    best = None  # (count, s, b, mask)
    bound = max_iters
    it = 0
    while it < min(bound, max_iters):
        it += 1
        sample = rng.choice(n, size=samples_per_iter, replace=False)
        model = fit_scale_shift(d[sample], t[sample])
        if model is None or model[0] <= 0:
            continue
        mask = _inliers(*model, d, t, inlier_thresh)
        count = int(mask.sum())
        if best is not None and count <= best[0]:
            continue
        # local optimisation: refit on the consensus set until it stops growing
        s, b = model
        for _ in range(lo_steps):
            refit = fit_scale_shift(d[mask], t[mask])
            if refit is None or refit[0] <= 0:
                break
            new_mask = _inliers(*refit, d, t, inlier_thresh)
            if new_mask.sum() < mask.sum():
                break
            s, b = refit
            if np.array_equal(new_mask, mask):
                break
            mask = new_mask
        count = int(mask.sum())
        if best is None or count > best[0]:
            best = (count, s, b, mask)
            w = count / n
            if w >= 1.0:
                bound = it
            else:
                denom = math.log1p(-(w**samples_per_iter))
                if denom < 0.0:
                    bound = min(max_iters, int(math.ceil(math.log(1.0 - confidence) / denom)))

    if best is None or best[0] < samples_per_iter:
        raise AlignmentError("no non-degenerate model with enough inliers")
    _, s, b, mask = best
    final = fit_scale_shift(d[mask], t[mask])
    if final is not None and final[0] > 0:
        s, b = final
    mask = _inliers(s, b, d, t, inlier_thresh)
    if mask.sum() < samples_per_iter:
        raise AlignmentError("final refit left too few inliers")
    inliers = np.zeros(n, dtype=bool)
    inliers[order] = mask
    res = np.abs(s * pairs.pred_depth + b - pairs.sfm_depth)[inliers]
    return AlignmentResult(float(s), float(b), inliers, it, float(res.mean()), float(res.max()))


def refine_anchors(pred: np.ndarray, sfm: np.ndarray):
    """Sorted unique predicted depths with their averaged SfM depths."""
    pred = np.asarray(pred, dtype=np.float64)
    sfm = np.asarray(sfm, dtype=np.float64)
    keys, inverse = np.unique(pred, return_inverse=True)
    sums = np.bincount(inverse, weights=sfm)
    counts = np.bincount(inverse)
    return keys, sums / counts


def piecewise_refine(depth, anchor_pred, anchor_sfm) -> np.ndarray:
    """Map predicted depths through the piecewise-linear anchor curve.

    Inside an interval ``d_k <= x < d_{k+1}`` the SfM depths are linearly
    interpolated; outside the anchor range the nearest boundary interval's
    affine map is extended.  Needs at least two distinct anchors.
    """
    dk, sk = refine_anchors(anchor_pred, anchor_sfm)
    if len(dk) < 2:
        raise AlignmentError("piecewise refinement needs two distinct anchors")
    x = np.asarray(depth, dtype=np.float64)
    k = np.clip(np.searchsorted(dk, x, side="right") - 1, 0, len(dk) - 2)
    t = (x - dk[k]) / (dk[k + 1] - dk[k])
    out = sk[k] + t * (sk[k + 1] - sk[k])
    return np.where(x == dk[k + 1], sk[k + 1], out)
