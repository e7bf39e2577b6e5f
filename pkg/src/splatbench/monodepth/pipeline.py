"""End-to-end monocular-depth initialisation: align, refine, sample, unproject, filter."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import InvalidInputError, PointCloud, SceneDescriptor
from .align import AlignmentError, piecewise_refine, ransac_scale_shift, sfm_depth_correspondences
from .pfm import read_pfm
from .points import adaptive_subsample_mask, depth_gradient_mask, remove_floaters, select_cameras, unproject

logger = logging.getLogger(__name__)


@dataclass
class MonodepthConfig:
    camera_limit: int = 300
    seed: int = 0
    samples_per_iter: int = 4
    confidence: float = 0.999
    inlier_thresh: float = 0.01
    max_iters: int = 2500
    refine: bool = True
    d_min: float = 5
    d_max: float = 15
    gradient_thresh: float = 0.05
    floater_tau: float = 0.1
    floater_ratio: float = 0.6

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ImageReport:
    camera_id: str
    skipped: bool
    reason: Optional[str] = None
    pairs: int = 0
    scale: Optional[float] = None
    shift: Optional[float] = None
    inliers: int = 0
    refined: bool = False
    points: int = 0


@dataclass
class MonodepthReport:
    config: dict
    images: list = field(default_factory=list)
    points_before_filter: int = 0
    points_after_filter: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def depth_path(depth_dir, camera_id: str) -> Path:
    return Path(depth_dir) / f"{camera_id}.pfm"


def load_depths(depth_dir, camera_ids) -> dict:
    """Depth maps present in ``depth_dir`` keyed by camera id (missing files are skipped)."""
    out = {}
    for cid in camera_ids:
        path = depth_path(depth_dir, cid)
        if path.exists():
            out[cid] = read_pfm(path).astype(np.float64)
    return out


def align_depth(camera, depth, sfm_points: PointCloud, config: MonodepthConfig, report: ImageReport) -> np.ndarray:
    """Aligned (and, when possible, refined) depth map in world units."""
    pairs = sfm_depth_correspondences(camera, sfm_points, depth)
    report.pairs = len(pairs)
    fit = ransac_scale_shift(
        pairs, config.samples_per_iter, config.confidence, config.inlier_thresh, config.max_iters, config.seed
    )
    report.scale, report.shift, report.inliers = fit.scale, fit.shift, fit.inlier_count
    aligned = fit.apply(depth)
    if config.refine:
        inl = fit.inliers
        try:
            refined = piecewise_refine(depth, pairs.pred_depth[inl], pairs.sfm_depth[inl])
        except AlignmentError:
            return aligned
        report.refined = True
        return refined
    return aligned


def monodepth_pipeline(
    scene: SceneDescriptor,
    sfm_points: PointCloud,
    depths: dict,
    images: Optional[dict] = None,
    config: Optional[MonodepthConfig] = None,
):
    """Dense point cloud from per-view predicted depth; returns ``(cloud, report)``.

    ``depths`` maps camera ids to predicted depth maps; ``images`` optionally
    supplies colours.  Views whose alignment fails are skipped.
    """
    config = config or MonodepthConfig()
    report = MonodepthReport(config.to_dict())
    cams = select_cameras(scene.cameras, config.camera_limit, config.seed)
    aligned = {}
    used = []
    parts = []
    for cam in cams:
        rep = ImageReport(cam.id, skipped=False)
        report.images.append(rep)
        if cam.id not in depths:
            rep.skipped, rep.reason = True, "missing depth map"
            logger.warning("camera %s: no depth map, skipped", cam.id)
            continue
        depth = np.asarray(depths[cam.id], dtype=np.float64)
        try:
            dmap = align_depth(cam, depth, sfm_points, config, rep)
        except AlignmentError as exc:
            rep.skipped, rep.reason = True, str(exc)
            logger.warning("camera %s: alignment failed (%s), skipped", cam.id, exc)
            continue
        dmap = np.where(dmap > 0, dmap, np.nan)
        mask = adaptive_subsample_mask(dmap, config.d_min, config.d_max)
        mask &= depth_gradient_mask(dmap, config.gradient_thresh)
        pts = unproject(cam, dmap, mask, None if images is None else images.get(cam.id))
        rep.points = len(pts)
        aligned[cam.id] = dmap
        used.append(cam)
        parts.append(pts)
    if not used:
        raise InvalidInputError("monodepth: no view could be aligned")
    cloud = PointCloud.concat(parts)
    report.points_before_filter = len(cloud)
    cloud = remove_floaters(cloud, used, aligned, config.floater_tau, config.floater_ratio)
    report.points_after_filter = len(cloud)
    return cloud, report
