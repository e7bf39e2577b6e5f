"""Domain types and shared geometry for Gaussian splatting."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numba
import numpy as np
from scipy.spatial import cKDTree

MIN_SCALE = 1e-7

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

PARAM_NAMES = ("means", "log_scales", "rotations", "opacity_logits", "sh_coeffs")


class InvalidInputError(ValueError):
    pass


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def num_sh_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_from_count(count: int) -> int:
    degree = int(round(np.sqrt(count))) - 1
    if degree < 0 or degree > 3 or (degree + 1) ** 2 != count:
        raise InvalidInputError(f"{count} SH coefficients do not match any degree in 0..3")
    return degree


def rgb_to_sh_dc(rgb):
    """Degree-0 coefficient that evaluates back to ``rgb``."""
    return (np.asarray(rgb) - 0.5) / SH_C0


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid transform.

    Pixel centres sit on integer coordinates: column ``j`` of the image is
    evaluated at ``u = j``, row ``i`` at ``v = i``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray
    id: str = "0"
    image_name: Optional[str] = None

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.id = str(self.id)

    def validate(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"camera {self.id}: focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvalidInputError(f"camera {self.id}: principal point outside the image")
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) <= 0:
            raise InvalidInputError(f"camera {self.id}: rotation is not a proper rotation")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def world_to_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def camera_to_world(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.T
        m[:3, 3] = self.center
        return m

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def project(self, points: np.ndarray):
        """Return ``(uv, z)`` for world points."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, fx, fy=None, width, height, cx=None, cy=None, id="0"):
        """Camera at ``eye`` looking at ``target`` (OpenCV axes: +z forward, +y down)."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        return cls(
            fx=fx,
            fy=fx if fy is None else fy,
            cx=(width - 1) / 2 if cx is None else cx,
            cy=(height - 1) / 2 if cy is None else cy,
            width=width,
            height=height,
            rotation=rot,
            translation=-rot @ eye,
            id=id,
        )


@dataclass
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray
    confidences: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if self.confidences is not None:
            self.confidences = np.asarray(self.confidences, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return len(self.positions)

    def validate(self) -> None:
        if len(self.positions) != len(self.colors):
            raise InvalidInputError("positions and colors differ in length")
        if self.confidences is not None and len(self.confidences) != len(self.positions):
            raise InvalidInputError("confidences differ in length from positions")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.colors))):
            raise InvalidInputError("point cloud contains non-finite values")

    def take(self, idx) -> "PointCloud":
        conf = None if self.confidences is None else self.confidences[idx]
        return PointCloud(self.positions[idx], self.colors[idx], conf)

    @classmethod
    def concat(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        if not clouds:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)))
        conf = None
        if all(c.confidences is not None for c in clouds):
            conf = np.concatenate([c.confidences for c in clouds])
        return cls(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            conf,
        )


@dataclass
class GaussianCloud:
    """Structure-of-arrays storage for every optimizable Gaussian parameter.

    ``rotations`` are ``(w, x, y, z)`` quaternions, ``sh_coeffs`` has shape
    ``(N, (L+1)**2, 3)``.
    """

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray

    def __len__(self) -> int:
        return len(self.means)

    @property
    def dtype(self):
        return self.means.dtype

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh_coeffs.shape[1])

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @classmethod
    def empty(cls, sh_degree: int = 0, dtype=np.float64) -> "GaussianCloud":
        k = num_sh_coeffs(sh_degree)
        return cls(
            np.zeros((0, 3), dtype),
            np.zeros((0, 3), dtype),
            np.zeros((0, 4), dtype),
            np.zeros((0,), dtype),
            np.zeros((0, k, 3), dtype),
        )

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def check(self) -> None:
        """Assert the structural invariants shared by every mutation."""
        n = len(self.means)
        shapes = {
            "means": (n, 3),
            "log_scales": (n, 3),
            "rotations": (n, 4),
            "opacity_logits": (n,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise AssertionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        sh = self.sh_coeffs
        if sh.ndim != 3 or sh.shape[0] != n or sh.shape[2] != 3:
            raise AssertionError(f"sh_coeffs has shape {sh.shape}")
        sh_degree_from_count(sh.shape[1])

    def astype(self, dtype) -> "GaussianCloud":
        return GaussianCloud(**{k: v.astype(dtype) for k, v in self.arrays().items()})

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(**{k: v.copy() for k, v in self.arrays().items()})

    def take(self, idx) -> "GaussianCloud":
        return GaussianCloud(**{k: v[idx] for k, v in self.arrays().items()})

    def extend(self, other: "GaussianCloud") -> None:
        for name in PARAM_NAMES:
            setattr(self, name, np.concatenate([getattr(self, name), getattr(other, name).astype(self.dtype)]))

    def keep(self, mask_or_idx) -> None:
        for name in PARAM_NAMES:
            setattr(self, name, getattr(self, name)[mask_or_idx])

    def normalize_rotations(self) -> None:
        norm = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        self.rotations = self.rotations / np.maximum(norm, 1e-30)

    def find_nonfinite(self) -> Optional[int]:
        bad = np.zeros(len(self), dtype=bool)
        for arr in self.arrays().values():
            bad |= ~np.isfinite(arr.reshape(len(self), -1 if len(self) else 0)).all(axis=1)
        idx = np.flatnonzero(bad)
        return int(idx[0]) if len(idx) else None


@dataclass
class SceneDescriptor:
    cameras: list
    train_ids: list
    test_ids: list
    image_paths: dict = field(default_factory=dict)
    scene_id: str = "scene"

    def __post_init__(self):
        ids = [c.id for c in self.cameras]
        train, test = set(self.train_ids), set(self.test_ids)
        if train & test:
            raise InvalidInputError("train and test splits overlap")
        if train | test != set(ids):
            raise InvalidInputError("train/test split must cover every camera id")

    @cached_property
    def scene_extent(self) -> float:
        train = [c for c in self.cameras if c.id in set(self.train_ids)] or self.cameras
        return scene_extent(train)

    def camera(self, cam_id: str) -> Camera:
        for c in self.cameras:
            if c.id == cam_id:
                return c
        raise KeyError(cam_id)

    @staticmethod
    def holdout_split(ids: Sequence[str], every: int):
        """Every ``every``-th id (by position) is a test view."""
        ids = list(ids)
        if every <= 0:
            return ids, []
        test = [i for k, i in enumerate(ids) if k % every == 0]
        train = [i for k, i in enumerate(ids) if k % every != 0]
        return train, test


def scene_extent(cameras: Sequence[Camera]) -> float:
    """Largest distance from a camera centre to the centroid of all centres."""
    if len(cameras) == 0:
        raise InvalidInputError("scene_extent needs at least one camera")
    centers = np.stack([c.center for c in cameras])
    return float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))


# --- spherical harmonics -------------------------------------------------


@numba.njit(cache=True)
def sh_basis(x, y, z, degree, out):
    out[0] = SH_C0
    if degree < 1:
        return
    out[1] = -SH_C1 * y
    out[2] = SH_C1 * z
    out[3] = -SH_C1 * x
    if degree < 2:
        return
    xx = x * x
    yy = y * y
    zz = z * z
    out[4] = SH_C2[0] * x * y
    out[5] = SH_C2[1] * y * z
    out[6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[7] = SH_C2[3] * x * z
    out[8] = SH_C2[4] * (xx - yy)
    if degree < 3:
        return
    out[9] = SH_C3[0] * y * (3.0 * xx - yy)
    out[10] = SH_C3[1] * x * y * z
    out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    out[14] = SH_C3[5] * z * (xx - yy)
    out[15] = SH_C3[6] * x * (xx - 3.0 * yy)


@numba.njit(cache=True)
def sh_basis_grad(x, y, z, degree, out):
    """Partial derivatives of each basis polynomial; ``out`` is (K, 3)."""
    out[0, 0] = 0.0
    out[0, 1] = 0.0
    out[0, 2] = 0.0
    if degree < 1:
        return
    for k in range(1, out.shape[0]):
        out[k, 0] = 0.0
        out[k, 1] = 0.0
        out[k, 2] = 0.0
    out[1, 1] = -SH_C1
    out[2, 2] = SH_C1
    out[3, 0] = -SH_C1
    if degree < 2:
        return
    xx = x * x
    yy = y * y
    zz = z * z
    out[4, 0] = SH_C2[0] * y
    out[4, 1] = SH_C2[0] * x
    out[5, 1] = SH_C2[1] * z
    out[5, 2] = SH_C2[1] * y
    out[6, 0] = -2.0 * SH_C2[2] * x
    out[6, 1] = -2.0 * SH_C2[2] * y
    out[6, 2] = 4.0 * SH_C2[2] * z
    out[7, 0] = SH_C2[3] * z
    out[7, 2] = SH_C2[3] * x
    out[8, 0] = 2.0 * SH_C2[4] * x
    out[8, 1] = -2.0 * SH_C2[4] * y
    if degree < 3:
        return
    out[9, 0] = SH_C3[0] * 6.0 * x * y
    out[9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
    out[10, 0] = SH_C3[1] * y * z
    out[10, 1] = SH_C3[1] * x * z
    out[10, 2] = SH_C3[1] * x * y
    out[11, 0] = SH_C3[2] * (-2.0 * x * y)
    out[11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
    out[11, 2] = SH_C3[2] * 8.0 * y * z
    out[12, 0] = SH_C3[3] * (-6.0 * x * z)
    out[12, 1] = SH_C3[3] * (-6.0 * y * z)
    out[12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    out[13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
    out[13, 1] = SH_C3[4] * (-2.0 * x * y)
    out[13, 2] = SH_C3[4] * 8.0 * x * z
    out[14, 0] = SH_C3[5] * 2.0 * x * z
    out[14, 1] = SH_C3[5] * (-2.0 * y * z)
    out[14, 2] = SH_C3[5] * (xx - yy)
    out[15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
    out[15, 1] = SH_C3[6] * (-6.0 * x * y)


def sh_basis_array(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values for many directions, shape ``(M, (degree+1)**2)``."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    out = np.empty((len(dirs), num_sh_coeffs(degree)))
    for i, (x, y, z) in enumerate(dirs):
        sh_basis(x, y, z, degree, out[i])
    return out


def sh_evaluate(view_dir, coeffs, degree: int) -> np.ndarray:
    """Colour of one SH expansion seen along ``view_dir`` (offset by 0.5, clamped at 0)."""
    if degree < 0 or degree > 3:
        raise InvalidInputError(f"SH degree {degree} outside 0..3")
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1, 3)
    if len(coeffs) != num_sh_coeffs(degree):
        raise InvalidInputError(
            f"degree {degree} needs {num_sh_coeffs(degree)} coefficients, got {len(coeffs)}"
        )
    d = np.asarray(view_dir, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise InvalidInputError("view_dir must be a unit vector")
    basis = sh_basis_array(d[None], degree)[0]
    return np.maximum(basis @ coeffs + 0.5, 0.0)


# --- covariance -----------------------------------------------------------


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for ``(..., 4)`` quaternions in ``(w, x, y, z)`` order."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    w = np.sqrt(max(0.0, 1.0 + r[0, 0] + r[1, 1] + r[2, 2])) / 2
    x = np.sqrt(max(0.0, 1.0 + r[0, 0] - r[1, 1] - r[2, 2])) / 2
    y = np.sqrt(max(0.0, 1.0 - r[0, 0] + r[1, 1] - r[2, 2])) / 2
    z = np.sqrt(max(0.0, 1.0 - r[0, 0] - r[1, 1] + r[2, 2])) / 2
    x = np.copysign(x, r[2, 1] - r[1, 2])
    y = np.copysign(y, r[0, 2] - r[2, 0])
    z = np.copysign(z, r[1, 0] - r[0, 1])
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def covariance_from_params(log_scale, rotation) -> np.ndarray:
    """``R diag(exp(log_scale))^2 R^T``; broadcasts over leading axes."""
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    r = quat_to_rotmat(rotation)
    m = r * s[..., None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


# --- neighbours -----------------------------------------------------------


def knn_mean_distance(points, k: int = 4, min_scale: float = MIN_SCALE) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest other points."""
    positions = points.positions if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    n = len(positions)
    if n < 2:
        raise InvalidInputError("knn_mean_distance needs at least two points")
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    kk = min(k, n - 1)
    dist, _ = cKDTree(positions).query(positions, k=kk + 1)
    # column 0 is the query point itself (or a coincident duplicate at distance 0)
    d = np.sort(dist, axis=1)[:, 1:]
    return np.maximum(d.mean(axis=1), min_scale)
