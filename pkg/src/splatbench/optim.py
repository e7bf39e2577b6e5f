"""Photometric loss, Adam with per-group learning rates, and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .bench.metrics import ssim_with_grad
from .core import GaussianCloud, InvalidInputError, PARAM_NAMES, SceneDescriptor
from .rasterizer import DEFAULT_RASTER, RasterConfig, render, render_backward, set_threads

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    total_steps: int = 2000
    lr_means: float = 1.6e-4  # multiplied by the scene extent
    lr_means_final_factor: float = 0.01
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 2.5e-3 / 20
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-15
    lambda_ssim: float = 0.2
    densify_interval: int = 100
    densify_start: int = 500
    densify_stop: Optional[int] = None  # None: half of total_steps
    gaussian_cap: Optional[int] = None  # None: uncapped
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    threads: Optional[int] = None
    dtype: str = "float64"

    def __post_init__(self):
        if self.densify_stop is None:
            self.densify_stop = self.total_steps // 2
        self.betas = tuple(self.betas)
        self.background = tuple(self.background)

    def validate(self) -> None:
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise InvalidInputError("lambda_ssim must be in [0, 1]")
        if self.total_steps > 0 and not (self.densify_start < self.densify_stop <= self.total_steps):
            raise InvalidInputError("need densify_start < densify_stop <= total_steps")
        if self.gaussian_cap is not None and self.gaussian_cap < 1:
            raise InvalidInputError("gaussian_cap must be >= 1")
        if self.densify_interval < 1:
            raise InvalidInputError("densify_interval must be >= 1")

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def dataset_scale(cls, **overrides) -> "TrainConfig":
        base = dict(total_steps=30000, densify_stop=15000)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


def photometric_loss(rendered, target, lambda_ssim: float = 0.2):
    """``(1 - lambda) * L1 + lambda * (1 - SSIM)`` and its gradient w.r.t. ``rendered``."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise InvalidInputError(f"rendered {rendered.shape} and target {target.shape} differ")
    diff = rendered - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lambda_ssim) * np.sign(diff) / diff.size
    loss = (1.0 - lambda_ssim) * l1
    if lambda_ssim > 0.0:
        s, ds = ssim_with_grad(rendered, target)
        loss += lambda_ssim * (1.0 - s)
        grad = grad - lambda_ssim * ds.reshape(grad.shape)
    return loss, grad


def means_lr(step: int, config: TrainConfig, scene_extent: float) -> float:
    """Exponential decay from ``lr0`` to ``lr0 * final_factor`` over ``total_steps``."""
    lr0 = config.lr_means * scene_extent
    lr1 = lr0 * config.lr_means_final_factor
    r = min(max(step / max(config.total_steps, 1), 0.0), 1.0)
    return float(math.exp((1 - r) * math.log(lr0) + r * math.log(lr1)))


class Adam:
    """Adam over the Gaussian parameter groups, with row-level lockstep edits."""

    def __init__(self, cloud: GaussianCloud, betas=(0.9, 0.999), eps=1e-15):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in cloud.arrays().items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in cloud.arrays().items()}

    def __len__(self) -> int:
        return len(self.m["means"])

    def step(self, cloud: GaussianCloud, grads: dict, lrs: dict) -> None:
        if len(cloud) != len(self):
            raise InvalidInputError(f"optimizer holds {len(self)} rows, cloud has {len(cloud)}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in PARAM_NAMES:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lrs[name] * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            arr = getattr(cloud, name)
            setattr(cloud, name, (arr - update).astype(arr.dtype))

    def keep(self, idx) -> None:
        for d in (self.m, self.v):
            for k in d:
                d[k] = d[k][idx]

    def extend(self, n: int) -> None:
        for d in (self.m, self.v):
            for k in d:
                d[k] = np.concatenate([d[k], np.zeros((n,) + d[k].shape[1:])])

    def reset_rows(self, idx, names=PARAM_NAMES) -> None:
        for d in (self.m, self.v):
            for k in names:
                d[k][idx] = 0.0


@dataclass
class TrainContext:
    """What a densification strategy may read from the running trainer."""

    scene: SceneDescriptor
    images: dict
    config: TrainConfig
    scene_extent: float
    background: np.ndarray
    rng: np.random.Generator
    raster: RasterConfig = DEFAULT_RASTER

    @property
    def train_ids(self) -> list:
        return list(self.scene.train_ids)


@dataclass
class TrainResult:
    cloud: GaussianCloud
    log: list = field(default_factory=list)
    config: Optional[TrainConfig] = None

    @property
    def max_gaussians(self) -> int:
        return max((r["n"] for r in self.log), default=len(self.cloud))

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def learning_rates(config: TrainConfig, step: int, scene_extent: float, sh_count: int) -> dict:
    sh_lr = np.full((1, sh_count, 1), config.lr_sh_rest)
    sh_lr[0, 0, 0] = config.lr_sh_dc
    return {
        "means": means_lr(step, config, scene_extent),
        "log_scales": config.lr_log_scales,
        "rotations": config.lr_rotations,
        "opacity_logits": config.lr_opacity,
        "sh_coeffs": sh_lr,
    }


def _view_sequence(train_ids, rng):
    while True:
        for i in rng.permutation(len(train_ids)):
            yield train_ids[i]


def train(
    scene: SceneDescriptor,
    images: dict,
    initial: GaussianCloud,
    strategy=None,
    config: Optional[TrainConfig] = None,
    raster: RasterConfig = DEFAULT_RASTER,
    log_path=None,
) -> TrainResult:
    """Optimise ``initial`` against the training views of ``scene``.

    ``images`` maps camera ids to ``(H, W, 3)`` float arrays in [0, 1].
    Each step renders one view (shuffled epochs), backpropagates the
    photometric loss, lets ``strategy`` inject gradients, steps Adam and
    finally lets ``strategy`` edit the cloud structurally.
    """
    from .densify import make_strategy

    config = config or TrainConfig()
    config.validate()
    set_threads(config.threads)
    if strategy is None or isinstance(strategy, str):
        strategy = make_strategy(strategy or "none")
    cloud = initial.astype(np.dtype(config.dtype)).copy()
    cloud.check()
    if config.gaussian_cap is not None and len(cloud) > config.gaussian_cap:
        raise InvalidInputError(f"initial cloud has {len(cloud)} Gaussians, above the cap {config.gaussian_cap}")
    if not scene.train_ids:
        raise InvalidInputError("scene has no training views")
    missing = [i for i in scene.train_ids if i not in images]
    if missing:
        raise InvalidInputError(f"missing training images for cameras {missing[:5]}")

    rng = np.random.default_rng(config.seed)
    extent = scene.scene_extent if scene.scene_extent > 0 else 1.0
    bg = np.asarray(config.background, dtype=np.float64)
    ctx = TrainContext(scene, images, config, extent, bg, rng, raster)
    opt = Adam(cloud, config.betas, config.eps)
    strategy.setup(ctx, cloud)
    views = _view_sequence(list(scene.train_ids), rng)
    log = []
    accum = None
    accum_count = 0

    for step in range(1, config.total_steps + 1):
        cam_id = next(views)
        camera = scene.camera(cam_id)
        out = render(cloud, camera, bg, raster)
        loss, dl = photometric_loss(out.image, images[cam_id], config.lambda_ssim)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step} (view {cam_id}, N={len(cloud)})")
        grads, viewspace = render_backward(cloud, camera, out, dl)
        strategy.before_optimizer(step, cloud, grads, viewspace, out, opt)

        window = max(1, int(strategy.accumulation_steps(step)))
        if window > 1:
            if accum is None or len(accum["means"]) != len(cloud):
                accum = {k: np.zeros_like(v) for k, v in grads.items()}
                accum_count = 0
            for k in grads:
                accum[k] += grads[k]
            accum_count += 1
            if accum_count >= window:
                grads = {k: v / accum_count for k, v in accum.items()}
                accum = None
                do_step = True
            else:
                do_step = False
        else:
            accum = None
            do_step = True

        if do_step:
            opt.step(cloud, grads, learning_rates(config, step, extent, cloud.sh_coeffs.shape[1]))
            cloud.normalize_rotations()
        report = strategy.after_optimizer(step, cloud, opt)
        if len(opt) != len(cloud) or len(strategy.state) != len(cloud):
            raise AssertionError(f"lockstep violated at step {step}")
        if config.gaussian_cap is not None and len(cloud) > config.gaussian_cap:
            raise AssertionError(f"cap exceeded at step {step}: {len(cloud)} > {config.gaussian_cap}")
        rec = {"step": step, "loss": loss, "n": len(cloud), "view": cam_id, "event": report}
        log.append(rec)
        if report:
            logger.debug("step %d: %s", step, report)

    result = TrainResult(cloud, log, config)
    if log_path is not None:
        result.write_log(log_path)
    return result
