"""Procedural scenes with known ground truth for desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Camera, GaussianCloud, PointCloud, SceneDescriptor, logit, rgb_to_sh_dc
from ..rasterizer import render


@dataclass
class SyntheticScene:
    scene: SceneDescriptor
    images: dict
    truth: GaussianCloud
    points: PointCloud  # ground-truth centres with their base colours


def orbit_cameras(n_views: int, radius: float = 4.0, size: int = 64, focal: float = 70.0) -> list:
    """Cameras on a ring around the origin, alternating above and below the equator."""
    cams = []
    for k in range(n_views):
        theta = 2 * np.pi * k / n_views
        elev = np.deg2rad(20.0 if k % 2 == 0 else -10.0)
        eye = radius * np.array([np.cos(elev) * np.cos(theta), np.cos(elev) * np.sin(theta), np.sin(elev)])
        cams.append(Camera.look_at(eye, (0.0, 0.0, 0.0), fx=focal, width=size, height=size, id=str(k)))
    return cams


def random_gaussians(n: int, rng, sh_degree: int = 0, radius: float = 1.0) -> GaussianCloud:
    """Gaussians inside a ball with spatially smooth colours."""
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    means = direction * radius * rng.uniform(0, 1, (n, 1)) ** (1 / 3)
    log_scales = np.log(rng.uniform(0.1, 0.3, (n, 3)))
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opac = rng.uniform(0.6, 0.95, n)
    colors = 0.5 + 0.25 * np.sin(means + np.array([0.0, 2.0, 4.0]))
    sh = np.zeros((n, (sh_degree + 1) ** 2, 3))
    sh[:, 0] = rgb_to_sh_dc(colors)
    return GaussianCloud(means, log_scales, quats, logit(opac), sh)


def make_scene(
    n_gaussians: int = 100,
    n_views: int = 20,
    size: int = 64,
    holdout_every: int = 8,
    seed: int = 0,
    background=(0.0, 0.0, 0.0),
) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    truth = random_gaussians(n_gaussians, rng)
    cams = orbit_cameras(n_views, size=size, focal=70.0 * size / 64)
    bg = np.asarray(background, dtype=np.float64)
    images = {c.id: render(truth, c, bg).image for c in cams}
    train, test = SceneDescriptor.holdout_split([c.id for c in cams], holdout_every)
    scene = SceneDescriptor(cams, train, test, scene_id=f"synthetic-{n_gaussians}-{seed}")
    colors = np.clip(0.5 + 0.28209479177387814 * truth.sh_coeffs[:, 0], 0, 1)
    return SyntheticScene(scene, images, truth, PointCloud(truth.means.copy(), colors))


def degraded_points(points: PointCloud, n: int, noise: float, rng) -> PointCloud:
    """``n`` of the true centres, jittered by isotropic noise of std ``noise``."""
    idx = np.sort(rng.choice(len(points), size=n, replace=False))
    sub = points.take(idx)
    return PointCloud(sub.positions + rng.normal(0.0, noise, sub.positions.shape), sub.colors)
