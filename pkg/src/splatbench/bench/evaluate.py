"""Render every view of a split and score it against the reference images."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import GaussianCloud, InvalidInputError, SceneDescriptor
from ..rasterizer import DEFAULT_RASTER, RasterConfig, render
from .metrics import psnr, ssim

INF_SENTINEL = "inf"


def encode_float(x):
    """JSON-safe float: infinities become the ``"inf"`` / ``"-inf"`` sentinels."""
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return INF_SENTINEL if x > 0 else "-" + INF_SENTINEL
    if math.isnan(x):
        return "nan"
    return x


def decode_float(x):
    return None if x is None else float(x)


@dataclass
class SplitMetrics:
    split: str
    psnr: float
    ssim: float
    per_view: dict = field(default_factory=dict)  # camera id -> {"psnr", "ssim"}

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "psnr": encode_float(self.psnr),
            "ssim": encode_float(self.ssim),
            "per_view": {
                k: {"psnr": encode_float(v["psnr"]), "ssim": encode_float(v["ssim"])} for k, v in self.per_view.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitMetrics":
        per_view = {
            k: {"psnr": decode_float(v["psnr"]), "ssim": decode_float(v["ssim"])} for k, v in data["per_view"].items()
        }
        return cls(data["split"], decode_float(data["psnr"]), decode_float(data["ssim"]), per_view)


def split_ids(scene: SceneDescriptor, split: str) -> list:
    if split == "train":
        return list(scene.train_ids)
    if split == "test":
        return list(scene.test_ids)
    raise InvalidInputError(f"unknown split {split!r}")


def evaluate(
    cloud: GaussianCloud,
    scene: SceneDescriptor,
    images: dict,
    split: str = "test",
    background=(0.0, 0.0, 0.0),
    raster: RasterConfig = DEFAULT_RASTER,
) -> SplitMetrics:
    """Mean PSNR and SSIM over the views of ``split``, keeping per-view values."""
    ids = split_ids(scene, split)
    if not ids:
        raise InvalidInputError(f"split {split!r} is empty")
    bg = np.asarray(background, dtype=np.float64)
    per_view = {}
    for cid in ids:
        out = render(cloud, scene.camera(cid), bg, raster)
        img = np.clip(out.image, 0.0, 1.0)
        per_view[cid] = {"psnr": psnr(img, images[cid]), "ssim": ssim(img, images[cid])}
    mean_psnr = float(np.mean([v["psnr"] for v in per_view.values()]))
    mean_ssim = float(np.mean([v["ssim"] for v in per_view.values()]))
    return SplitMetrics(split, mean_psnr, mean_ssim, per_view)
