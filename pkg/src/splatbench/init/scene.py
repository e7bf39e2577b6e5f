"""Scene directories on disk: a COLMAP model plus an ``images/`` folder."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..core import GaussianCloud, InvalidInputError, PointCloud, SceneDescriptor, rotmat_to_quat
from .colmap import ColmapModel, ImagePose, Intrinsics, find_model_dir, load_colmap_sparse, write_colmap_binary, write_colmap_text
from .edgs import import_edgs, read_edgs
from .gaussians import InitSpec, perturb, points_to_gaussians, random_points, resolve_init_size, uniform_subsample
from .ply import read_point_ply


@dataclass
class LoadedScene:
    """A scene with its SfM points; images are read from disk unless held in memory."""

    scene: SceneDescriptor
    model: ColmapModel
    root: Optional[Path] = None
    image_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def in_memory(cls, scene: SceneDescriptor, points: PointCloud, images: dict) -> "LoadedScene":
        model = ColmapModel(points=points, point_ids=np.arange(len(points)), errors=np.zeros(len(points)))
        return cls(scene, model, None, dict(images))

    @property
    def sfm_points(self) -> PointCloud:
        return self.model.points

    def images(self, ids=None) -> dict:
        ids = [c.id for c in self.scene.cameras] if ids is None else ids
        for cid in ids:
            if cid not in self.image_cache:
                self.image_cache[cid] = load_image(self.scene.image_paths[cid])
        return {cid: self.image_cache[cid] for cid in ids}

    @property
    def center(self) -> np.ndarray:
        return np.mean([c.center for c in self.scene.cameras], axis=0)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path, image: np.ndarray) -> None:
    data = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def load_scene(scene_dir, holdout_every: int = 8, scene_id: Optional[str] = None) -> LoadedScene:
    """Read the sparse model and locate every registered image.

    Views are ordered by image name; every ``holdout_every``-th is a test view.
    """
    root = Path(scene_dir)
    model = load_colmap_sparse(find_model_dir(root))
    cams = model.cameras()
    image_dir = root / "images"
    paths = {}
    for cam in cams:
        path = image_dir / cam.image_name
        if not path.exists():
            raise InvalidInputError(f"image {path} listed in the model is missing")
        paths[cam.id] = str(path)
    train, test = SceneDescriptor.holdout_split([c.id for c in cams], holdout_every)
    scene = SceneDescriptor(cams, train, test, paths, scene_id or root.name)
    return LoadedScene(scene, model, root)


def save_scene(scene_dir, cameras, images: dict, points: PointCloud, binary: bool = True) -> Path:
    """Write cameras, images and a point cloud as a scene directory."""
    root = Path(scene_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    model = ColmapModel()
    for k, cam in enumerate(cameras, start=1):
        name = cam.image_name or (f"{int(cam.id):04d}.png" if cam.id.isdigit() else f"{cam.id}.png")
        model.intrinsics[k] = Intrinsics("PINHOLE", cam.width, cam.height, (cam.fx, cam.fy, cam.cx, cam.cy))
        q = rotmat_to_quat(cam.rotation)
        model.images[k] = ImagePose(tuple(float(v) for v in q), tuple(float(v) for v in cam.translation), k, name)
        save_image(root / "images" / name, images[cam.id])
    model.point_ids = np.arange(1, len(points) + 1, dtype=np.int64)
    model.points = points
    model.errors = np.zeros(len(points))
    writer = write_colmap_binary if binary else write_colmap_text
    writer(model, root / "sparse" / "0")
    return root


def build_initial_cloud(
    spec: InitSpec,
    loaded: LoadedScene,
    gmax: Optional[int] = None,
    available=(),
    sh_degree: int = 0,
    cap: Optional[int] = None,
) -> GaussianCloud:
    """Materialise ``spec`` for ``loaded``: pick the source, size it, add noise, convert.

    ``cap`` clamps the resolved size so a run never starts above its budget.
    """
    spec.validate()
    extent = loaded.scene.scene_extent
    sfm_size = len(loaded.sfm_points)

    if spec.source == "edgs_file":
        if spec.path is None:
            raise InvalidInputError("edgs_file init needs a path")
        size = len(read_edgs(spec.path))
        n = _clamp(resolve_init_size(spec, gmax, sfm_size, available, size), cap)
        cloud = import_edgs(spec.path, n, spec.seed)
        cloud.means = perturb(cloud.means, spec.noise, extent, spec.seed + 1)
        return cloud

    if spec.source == "sfm":
        points = loaded.sfm_points
    elif spec.source == "dense_ply":
        if spec.path is None:
            raise InvalidInputError("dense_ply init needs a path")
        points = read_point_ply(spec.path)
    else:
        points = None

    n = _clamp(resolve_init_size(spec, gmax, sfm_size, available, None if points is None else len(points)), cap)
    if points is None:
        points = random_points(n, loaded.center, extent, spec.seed)
    else:
        points = uniform_subsample(points, n, spec.seed)
    noisy = PointCloud(perturb(points.positions, spec.noise, extent, spec.seed + 1), points.colors)
    return points_to_gaussians(noisy, sh_degree=sh_degree)


def _clamp(n: int, cap: Optional[int]) -> int:
    return n if cap is None else min(n, cap)
