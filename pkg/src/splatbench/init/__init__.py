"""Initial Gaussian clouds from SfM models, dense point clouds, EDGS files or at random."""

from .colmap import ColmapModel, ColmapParseError, load_colmap_sparse, write_colmap_binary, write_colmap_text
from .edgs import edgs_scale_multiplier, import_edgs, read_edgs, write_edgs
from .gaussians import (
    INIT_OPACITY,
    InitSpec,
    perturb,
    points_to_gaussians,
    random_points,
    parse_size,
    resolve_init_size,
    uniform_subsample,
)
from .ply import read_gaussian_ply, read_point_ply, write_gaussian_ply, write_point_ply
from .scene import LoadedScene, build_initial_cloud, load_image, load_scene, save_image, save_scene

__all__ = [
    "ColmapModel",
    "ColmapParseError",
    "INIT_OPACITY",
    "InitSpec",
    "LoadedScene",
    "build_initial_cloud",
    "edgs_scale_multiplier",
    "import_edgs",
    "load_colmap_sparse",
    "load_image",
    "load_scene",
    "perturb",
    "points_to_gaussians",
    "random_points",
    "read_edgs",
    "read_gaussian_ply",
    "read_point_ply",
    "parse_size",
    "resolve_init_size",
    "save_image",
    "save_scene",
    "uniform_subsample",
    "write_colmap_binary",
    "write_colmap_text",
    "write_edgs",
    "write_gaussian_ply",
    "write_point_ply",
]
