"""MCMC densification: noisy exploration plus opacity-weighted relocation and growth."""

from __future__ import annotations

import math
from math import comb

import numpy as np

from ..core import GaussianCloud, logit, quat_to_rotmat
from ..optim import means_lr
from .base import MutationReport, Strategy, append_rows, headroom


def relocation_params(opacity: np.ndarray, scales: np.ndarray, copies: np.ndarray):
    """Opacity and scales for ``copies`` coincident splats that jointly replace one.

    ``opacity`` is ``(M,)``, ``scales`` ``(M, 3)``, ``copies`` ``(M,)`` with
    values >= 1.  The new opacity keeps the composite alpha at the centre
    unchanged; the scale factor matches the integrated footprint.
    """
    opacity = np.asarray(opacity, dtype=np.float64)
    copies = np.asarray(copies)
    new_op = 1.0 - np.power(1.0 - opacity, 1.0 / copies)
    denom = np.zeros_like(opacity)
    for j, n in enumerate(copies):
        total = 0.0
        for i in range(1, int(n) + 1):
            for k in range(i):
                total += comb(i - 1, k) * (-1) ** k * new_op[j] ** (k + 1) / math.sqrt(k + 1)
        denom[j] = total
    factor = opacity / denom
    return new_op, scales * factor[:, None]


def sample_targets(weights: np.ndarray, count: int, rng) -> np.ndarray:
    p = weights / weights.sum()
    return rng.choice(len(weights), size=count, replace=True, p=p)


class MCMCStrategy(Strategy):
    kind = "mcmc"
    uses_opacity_reset = False

    def before_optimizer(self, step, cloud, grads, viewspace, render_output, optimizer) -> None:
        super().before_optimizer(step, cloud, grads, viewspace, render_output, optimizer)
        n = len(cloud)
        if n == 0:
            return
        cfg = self.config
        op = cloud.opacities
        # d|alpha|/dlogit and d|s|/dlog_s of the mean-normalised regularisers
        grads["opacity_logits"] += cfg.opacity_reg / n * op * (1.0 - op)
        grads["log_scales"] += cfg.scale_reg / (3 * n) * cloud.scales

    def densify(self, step, cloud, optimizer, report: MutationReport) -> None:
        report.relocated = self.relocate(cloud, optimizer)
        report.added = self.grow(cloud, optimizer)
        self.state.reset()

    def _apply_copies(self, cloud: GaussianCloud, targets: np.ndarray):
        """Weaken each target in place; returns the per-sample parameter block for its copies."""
        uniq, counts = np.unique(targets, return_counts=True)
        new_op, new_scales = relocation_params(cloud.opacities[uniq], cloud.scales[uniq], counts + 1)
        new_op = np.clip(new_op, self.config.prune_opacity, 1.0 - 1e-7)
        cloud.opacity_logits[uniq] = logit(new_op)
        cloud.log_scales[uniq] = np.log(new_scales)
        return cloud.take(targets), uniq

    def relocate(self, cloud: GaussianCloud, optimizer) -> int:
        op = cloud.opacities
        dead = np.flatnonzero(op < self.config.prune_opacity)
        alive = np.flatnonzero(op >= self.config.prune_opacity)
        if len(dead) == 0 or len(alive) == 0:
            return 0
        picks = alive[sample_targets(op[alive], len(dead), self.ctx.rng)]
        copies, uniq = self._apply_copies(cloud, picks)
        for name, arr in copies.arrays().items():
            getattr(cloud, name)[dead] = arr
        optimizer.reset_rows(dead)
        optimizer.reset_rows(uniq)
        return len(dead)

    def grow(self, cloud: GaussianCloud, optimizer) -> int:
        n_add = self.growth_count(len(cloud))
        if n_add <= 0:
            return 0
        picks = sample_targets(cloud.opacities, n_add, self.ctx.rng)
        copies, uniq = self._apply_copies(cloud, picks)
        optimizer.reset_rows(uniq)
        return append_rows(cloud, optimizer, self.state, copies)

    def growth_count(self, n: int) -> int:
        return int(min(math.ceil(self.config.growth_rate * n), headroom(n, self.cap)))

    def after_structure(self, step, cloud, optimizer) -> None:
        self.add_noise(step, cloud)

    def add_noise(self, step: int, cloud: GaussianCloud) -> None:
        """Perturb means by ``L z`` with ``L L^T = Sigma``, gated towards low opacity."""
        if len(cloud) == 0:
            return
        cfg = self.config
        lr = means_lr(step, self.ctx.config, self.ctx.scene_extent)
        gate = 1.0 / (1.0 + np.exp(cfg.noise_gate_k * (cloud.opacities - cfg.prune_opacity)))
        rot = quat_to_rotmat(cloud.rotations)
        z = self.ctx.rng.standard_normal((len(cloud), 3))
        noise = np.einsum("nij,nj->ni", rot, z * cloud.scales)
        cloud.means += (cfg.noise_lr * lr * gate[:, None] * noise).astype(cloud.dtype)
