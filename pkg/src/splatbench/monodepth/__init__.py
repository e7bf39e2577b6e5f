"""Dense initial point clouds from externally predicted monocular depth maps."""

from .align import (
    AlignmentError,
    AlignmentResult,
    DepthPairs,
    fit_scale_shift,
    piecewise_refine,
    ransac_scale_shift,
    refine_anchors,
    sfm_depth_correspondences,
)
from .pfm import read_pfm, write_pfm
from .pipeline import MonodepthConfig, MonodepthReport, depth_path, load_depths, monodepth_pipeline
from .points import (
    adaptive_subsample_mask,
    depth_gradient_mask,
    floater_votes,
    iqr_clamp,
    mask_from_factors,
    remove_floaters,
    select_cameras,
    subsample_factors,
    unproject,
)

__all__ = [
    "AlignmentError",
    "AlignmentResult",
    "DepthPairs",
    "MonodepthConfig",
    "MonodepthReport",
    "adaptive_subsample_mask",
    "depth_gradient_mask",
    "depth_path",
    "fit_scale_shift",
    "floater_votes",
    "iqr_clamp",
    "load_depths",
    "mask_from_factors",
    "monodepth_pipeline",
    "piecewise_refine",
    "ransac_scale_shift",
    "read_pfm",
    "refine_anchors",
    "remove_floaters",
    "select_cameras",
    "sfm_depth_correspondences",
    "subsample_factors",
    "unproject",
    "write_pfm",
]
