"""Turning point clouds into initial Gaussians, plus the sizing and noise protocol."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ..core import (
    GaussianCloud,
    InvalidInputError,
    PointCloud,
    knn_mean_distance,
    logit,
    num_sh_coeffs,
    rgb_to_sh_dc,
)

INIT_OPACITY = 0.1
SOURCES = ("sfm", "dense_ply", "edgs_file", "random")
SIZE_MODES = ("match-sfm", "fraction", "absolute", "compare", "all")


def points_to_gaussians(
    pc: PointCloud,
    sh_degree: int = 0,
    opacity: float = INIT_OPACITY,
    k: int = 4,
    single_point_scale: float = 0.01,
) -> GaussianCloud:
    """Isotropic Gaussians at the points, sized by the mean distance to their ``k`` neighbours.

    A lone point has no neighbours and gets ``single_point_scale``.
    """
    n = len(pc)
    if n == 0:
        raise InvalidInputError("cannot initialise Gaussians from an empty point cloud")
    pc.validate()
    if n == 1:
        dist = np.full(1, single_point_scale)
    else:
        dist = knn_mean_distance(pc.positions, k=k)
    sh = np.zeros((n, num_sh_coeffs(sh_degree), 3))
    sh[:, 0] = rgb_to_sh_dc(pc.colors)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianCloud(
        pc.positions.astype(np.float64).copy(),
        np.repeat(np.log(dist)[:, None], 3, axis=1),
        rot,
        np.full(n, logit(opacity), dtype=np.float64),
        sh,
    )


def uniform_subsample(pc: PointCloud, n: int, seed: Union[int, np.random.Generator] = 0) -> PointCloud:
    """``n`` distinct points drawn uniformly without replacement."""
    if n < 0 or n > len(pc):
        raise InvalidInputError(f"cannot draw {n} distinct points from {len(pc)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(pc), size=n, replace=False))
    return pc.take(idx)


def perturb(positions: np.ndarray, sigma_fraction: float, scene_extent: float, seed=0) -> np.ndarray:
    """Add i.i.d. Gaussian noise with std ``sigma_fraction * scene_extent`` per coordinate."""
    if sigma_fraction < 0:
        raise InvalidInputError("noise fraction must be >= 0")
    positions = np.asarray(positions, dtype=np.float64)
    if sigma_fraction == 0:
        return positions.copy()
    rng = np.random.default_rng(seed)
    return positions + rng.normal(0.0, sigma_fraction * scene_extent, positions.shape)


def random_points(n: int, center, scene_extent: float, seed=0) -> PointCloud:
    """Uniform positions in the cube of side ``2 * scene_extent`` around ``center``, random colours."""
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=np.float64)
    pos = center + rng.uniform(-scene_extent, scene_extent, (n, 3))
    return PointCloud(pos, rng.uniform(0.0, 1.0, (n, 3)))


@dataclass
class InitSpec:
    """How to build an initial cloud: source, target size and positional noise.

    ``size_mode`` is one of ``match-sfm``, ``fraction`` (of the cap),
    ``absolute``, ``compare`` (smallest available initialiser and the cap)
    or ``all`` (use the source unchanged).
    """

    source: str = "sfm"
    size_mode: str = "match-sfm"
    size_value: Optional[float] = None
    noise: float = 0.0
    seed: int = 0
    path: Optional[str] = None

    def validate(self) -> None:
        if self.source not in SOURCES:
            raise InvalidInputError(f"unknown init source {self.source!r}")
        if self.size_mode not in SIZE_MODES:
            raise InvalidInputError(f"unknown size mode {self.size_mode!r}")
        if self.size_mode in ("fraction", "absolute") and (self.size_value is None or self.size_value <= 0):
            raise InvalidInputError(f"size mode {self.size_mode} needs a positive value")
        if self.noise < 0:
            raise InvalidInputError("noise must be >= 0")

    @property
    def label(self) -> str:
        size = self.size_mode if self.size_value is None else f"{self.size_mode}={self.size_value:g}"
        return f"{self.source}/{size}/noise={self.noise:g}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "InitSpec":
        """Parse ``source[:size][@noise]``, e.g. ``sfm``, ``dense_ply:0.5``, ``random:2000@0.01``.

        A size below or equal to 1 with a decimal point is a fraction of the
        cap, an integer is an absolute count; ``match-sfm``, ``compare`` and
        ``all`` name the remaining modes.
        """
        noise = 0.0
        if "@" in text:
            text, noise_s = text.split("@", 1)
            noise = float(noise_s)
        source, _, size = text.partition(":")
        path = None
        if "=" in source:
            source, path = source.split("=", 1)
        if not size:
            mode, value = ("match-sfm", None) if source == "sfm" else ("all", None)
        else:
            mode, value = parse_size(size)
        spec = cls(source, mode, value, noise, seed, path)
        spec.validate()
        return spec


def parse_size(token) -> tuple:
    """``(size_mode, size_value)`` for a size token such as ``0.5``, ``2000`` or ``match-sfm``."""
    if isinstance(token, bool):
        raise InvalidInputError(f"bad init size {token!r}")
    if isinstance(token, int):
        return "absolute", float(token)
    if isinstance(token, float):
        return "fraction", token
    token = str(token).strip()
    if token in ("match-sfm", "compare", "all"):
        return token, None
    try:
        return ("fraction", float(token)) if "." in token else ("absolute", float(int(token)))
    except ValueError:
        raise InvalidInputError(f"bad init size {token!r}") from None


def resolve_init_size(
    spec: InitSpec,
    gmax: Optional[int],
    sfm_size: Optional[int],
    available: Sequence[int] = (),
    source_size: Optional[int] = None,
) -> int:
    """Target number of initial Gaussians for ``spec``."""
    mode = spec.size_mode
    if mode == "match-sfm":
        if sfm_size is None:
            raise InvalidInputError("match-sfm needs the SfM point count")
        return int(sfm_size)
    if mode == "fraction":
        if gmax is None:
            raise InvalidInputError("a fractional size needs the Gaussian cap")
        return int(round(spec.size_value * gmax))
    if mode == "absolute":
        return int(spec.size_value)
    if mode == "compare":
        sizes = [int(s) for s in available]
        if gmax is not None:
            sizes.append(int(gmax))
        if not sizes:
            raise InvalidInputError("compare mode needs at least one initialiser size or the cap")
        return min(sizes)
    if source_size is None:
        raise InvalidInputError("size mode 'all' needs the source size")
    return int(source_size)
