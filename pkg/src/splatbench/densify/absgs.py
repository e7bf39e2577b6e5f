"""Adaptive density control with absolute-gradient accumulation, under a hard cap."""

from __future__ import annotations

import numpy as np

from ..core import GaussianCloud, quat_to_rotmat
from .base import MutationReport, Strategy, append_rows, headroom, prune, remove_rows


def select_candidates(stat: np.ndarray, threshold: float, budget: float, cost=None) -> np.ndarray:
    """Indices with ``stat >= threshold``, highest first, while their summed cost fits ``budget``.

    ``cost`` is the per-Gaussian growth of densifying it (1 when omitted).
    Ties are broken by index so the choice is deterministic.
    """
    idx = np.flatnonzero(stat >= threshold)
    c = np.ones(len(stat)) if cost is None else np.asarray(cost, dtype=np.float64)
    if c[idx].sum() > budget:
        idx = idx[np.lexsort((idx, -stat[idx]))]
        idx = np.sort(idx[np.cumsum(c[idx]) <= budget])
    return idx


def split_children(cloud: GaussianCloud, parents: np.ndarray, n_children: int, divisor: float, rng) -> GaussianCloud:
    """Children drawn from each parent's own Gaussian, with shrunken scales."""
    src = cloud.take(np.repeat(parents, n_children))
    scales = cloud.scales[parents]
    rot = quat_to_rotmat(cloud.rotations[parents])
    z = rng.standard_normal((len(parents), n_children, 3))
    offsets = np.einsum("nij,nkj->nki", rot, z * scales[:, None, :]).reshape(-1, 3)
    src.means = (src.means + offsets).astype(cloud.dtype)
    src.log_scales = (src.log_scales - np.log(divisor)).astype(cloud.dtype)
    return src


class AbsGSStrategy(Strategy):
    kind = "absgs"

    def densify(self, step, cloud, optimizer, report: MutationReport) -> None:
        cfg = self.config
        stat = self.state.mean_grad("abs")
        small_all = cloud.scales.max(axis=1) <= cfg.percent_dense * self.ctx.scene_extent
        cost = np.where(small_all, 1, cfg.split_children - 1)
        chosen = select_candidates(stat, cfg.grad_threshold, headroom(len(cloud), self.cap), cost)
        clone_idx = chosen[small_all[chosen]]
        split_idx = chosen[~small_all[chosen]]
        report.extra["candidates"] = int(np.sum(stat >= cfg.grad_threshold))

        children = split_children(cloud, split_idx, cfg.split_children, cfg.split_scale_divisor, self.ctx.rng)
        n0 = len(cloud)
        report.cloned = append_rows(cloud, optimizer, self.state, cloud.take(clone_idx))
        append_rows(cloud, optimizer, self.state, children)
        report.split = len(split_idx)
        remove = np.zeros(len(cloud), dtype=bool)
        remove[split_idx] = True
        remove_rows(cloud, optimizer, self.state, remove)
        report.extra["net_growth"] = len(cloud) - n0

        report.pruned = prune(cloud, optimizer, self.state, cfg, self.ctx.scene_extent, self.size_checks(step))
        self.state.reset()
