"""Edge-guided densification with a gradually rising size limit."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy import ndimage

from ..core import GaussianCloud, logit, quat_to_rotmat
from ..rasterizer import compositing_weight_sums, render
from .base import MutationReport, Strategy, append_rows, prune, remove_rows

LAPLACE_KERNEL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
LUMA = np.array([0.299, 0.587, 0.114])


def edge_map(image: np.ndarray) -> np.ndarray:
    """Absolute discrete Laplacian of the grayscale image, edge-replicated borders."""
    image = np.asarray(image, dtype=np.float64)
    gray = image @ LUMA if image.ndim == 3 else image
    return np.abs(ndimage.correlate(gray, LAPLACE_KERNEL, mode="nearest"))


def edge_aware_scores(cloud: GaussianCloud, views, outputs, edge_maps) -> np.ndarray:
    """Mean compositing-weighted edge response per Gaussian over the views that see it.

    ``views``, ``outputs`` and ``edge_maps`` are parallel sequences of cameras,
    their render outputs and per-pixel edge maps.
    """
    total = np.zeros(len(cloud))
    seen = np.zeros(len(cloud), dtype=np.int64)
    for camera, out, edges in zip(views, outputs, edge_maps):
        total += compositing_weight_sums(cloud, camera, out, edges)
        seen += out.radii > 0
    return np.where(seen > 0, total / np.maximum(seen, 1), 0.0)


def growth_schedule(n_events: int, n_init: int, cap: Optional[int], start_fraction: float) -> list:
    """Size limit per densify event: linear from the starting size up to ``cap``."""
    if cap is None:
        return [math.inf] * n_events
    start = min(cap, max(n_init, math.ceil(start_fraction * cap)))
    if n_events <= 1:
        return [cap] * n_events
    return [int(start + (cap - start) * e // (n_events - 1)) for e in range(n_events)]


def sample_by_score(candidates: np.ndarray, scores: np.ndarray, budget: float, rng) -> np.ndarray:
    """Up to ``budget`` candidates drawn without replacement, probability proportional to score.

    Zero-score candidates are never drawn.
    """
    pool = candidates[scores[candidates] > 0]
    n = int(min(len(pool), budget))
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    w = scores[pool]
    return np.sort(rng.choice(pool, size=n, replace=False, p=w / w.sum()))


def split_along_axis(cloud: GaussianCloud, parents: np.ndarray, offset: float, opacity_factor: float) -> GaussianCloud:
    """Two children per parent, displaced both ways along the longest principal axis."""
    scales = cloud.scales[parents]
    axis_idx = np.argmax(scales, axis=1)
    rows = np.arange(len(parents))
    rot = quat_to_rotmat(cloud.rotations[parents])
    direction = rot[rows, :, axis_idx]
    shift = (offset * scales[rows, axis_idx])[:, None] * direction

    children = cloud.take(np.repeat(parents, 2))
    sign = np.tile([1.0, -1.0], len(parents))[:, None]
    children.means = (children.means + sign * np.repeat(shift, 2, axis=0)).astype(cloud.dtype)
    children.opacity_logits = logit(children.opacities * opacity_factor).astype(cloud.dtype)
    long_axis = np.repeat(axis_idx, 2)
    children.log_scales[np.arange(len(children)), long_axis] -= math.log(2.0)
    return children


class IDHFRStrategy(Strategy):
    kind = "idhfr"

    def setup(self, ctx, cloud: GaussianCloud) -> None:
        super().setup(ctx, cloud)
        cfg = ctx.config
        self.events = [
            s for s in range(cfg.densify_start, cfg.densify_stop + 1) if s % cfg.densify_interval == 0
        ]
        self.schedule = growth_schedule(
            len(self.events), len(cloud), self.cap, self.config.growth_start_fraction
        )
        self.current_limit = self.schedule[0] if self.schedule else self.cap
        self.last_reset: Optional[int] = None
        self.edge_maps = {cid: edge_map(ctx.images[cid]) for cid in ctx.train_ids}

    def limit_at(self, step: int):
        """Size limit in force at ``step`` (the latest scheduled value reached)."""
        value = self.schedule[0] if self.schedule else self.cap
        for s, v in zip(self.events, self.schedule):
            if s <= step:
                value = v
        return value

    def accumulation_steps(self, step: int) -> int:
        if step >= self.config.accumulation_start_fraction * self.ctx.config.total_steps:
            return self.config.accumulation_window
        return 1

    def scores(self, cloud: GaussianCloud) -> np.ndarray:
        ids = self.ctx.train_ids
        n_views = min(self.config.scoring_views, len(ids))
        picked = [ids[i] for i in np.sort(self.ctx.rng.choice(len(ids), n_views, replace=False))]
        cams = [self.ctx.scene.camera(cid) for cid in picked]
        outs = [render(cloud, cam, self.ctx.background, self.ctx.raster) for cam in cams]
        return edge_aware_scores(cloud, cams, outs, [self.edge_maps[cid] for cid in picked])

    def densify(self, step, cloud, optimizer, report: MutationReport) -> None:
        cfg = self.config
        self.current_limit = self.limit_at(step)
        stat = self.state.mean_grad("abs")
        candidates = np.flatnonzero(stat >= cfg.grad_threshold)
        budget = max(0, self.current_limit - len(cloud))
        chosen = np.zeros(0, dtype=np.int64)
        if len(candidates) and budget > 0:
            scores = self.scores(cloud)
            chosen = sample_by_score(candidates, scores, budget, self.ctx.rng)
        report.extra.update(
            candidates=int(len(candidates)),
            limit=None if math.isinf(self.current_limit) else int(self.current_limit),
            budget=None if math.isinf(budget) else int(budget),
            selected=int(len(chosen)),
        )
        if len(chosen):
            children = split_along_axis(cloud, chosen, cfg.split_offset, cfg.split_opacity_factor)
            append_rows(cloud, optimizer, self.state, children)
            remove = np.zeros(len(cloud), dtype=bool)
            remove[chosen] = True
            remove_rows(cloud, optimizer, self.state, remove)
        report.split = int(len(chosen))
        report.pruned = prune(cloud, optimizer, self.state, cfg, self.ctx.scene_extent, self.size_checks(step))
        self.state.reset()

    def after_optimizer(self, step, cloud, optimizer) -> Optional[dict]:
        report = super().after_optimizer(step, cloud, optimizer)
        if report is not None and report["opacity_reset"]:
            self.last_reset = step
        if self.last_reset is not None and step == self.last_reset + self.config.prune_delay:
            extra = MutationReport(step=step, n_before=len(cloud))
            extra.pruned = prune(cloud, optimizer, self.state, self.config, self.ctx.scene_extent, False)
            extra.n_after = len(cloud)
            extra.extra["delayed_prune"] = True
            if report is None:
                report = extra.to_dict()
            else:
                report["pruned"] += extra.pruned
                report["n_after"] = len(cloud)
        return report
