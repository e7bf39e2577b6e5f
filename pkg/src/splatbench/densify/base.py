"""Shared densification machinery: statistics, lockstep edits, pruning."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from ..core import GaussianCloud, InvalidInputError, logit


@dataclass
class StrategyConfig:
    kind: str = "absgs"
    grad_threshold: float = 4e-4
    prune_opacity: float = 0.005
    percent_dense: float = 0.01
    split_children: int = 2
    split_scale_divisor: float = 1.6
    opacity_reset_interval: int = 3000
    opacity_reset_value: float = 0.01
    world_size_fraction: float = 0.1
    max_screen_size: Optional[float] = 20.0  # pixels; None disables
    # mcmc
    growth_rate: float = 0.05
    opacity_reg: float = 0.01
    scale_reg: float = 0.01
    noise_lr: float = 1e3
    noise_gate_k: float = 100.0
    # idhfr
    growth_start_fraction: float = 0.3
    scoring_views: int = 4
    split_offset: float = 0.5
    split_opacity_factor: float = 0.6
    prune_delay: int = 500
    accumulation_window: int = 4
    accumulation_start_fraction: float = 0.8

    def validate(self) -> None:
        if self.kind not in ("absgs", "mcmc", "idhfr", "none"):
            raise InvalidInputError(f"unknown strategy kind {self.kind!r}")
        if self.grad_threshold <= 0:
            raise InvalidInputError("grad_threshold must be > 0")
        if not 0.0 < self.prune_opacity < 1.0:
            raise InvalidInputError("prune_opacity must lie in (0, 1)")
        if self.growth_rate <= 0:
            raise InvalidInputError("growth_rate must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StrategyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown strategy options: {sorted(unknown)}")
        return cls(**data)


@dataclass
class MutationReport:
    step: int
    cloned: int = 0
    split: int = 0
    pruned: int = 0
    relocated: int = 0
    added: int = 0
    opacity_reset: bool = False
    n_before: int = 0
    n_after: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def structural(self) -> int:
        return self.cloned + self.split + self.pruned + self.relocated + self.added

    def to_dict(self) -> dict:
        return asdict(self)


class DensifyState:
    """Per-Gaussian accumulators, kept in lockstep with the cloud."""

    def __init__(self, n: int = 0):
        self.grad_sum = np.zeros(n)
        self.abs_grad_sum = np.zeros(n)
        self.count = np.zeros(n, dtype=np.int64)
        self.max_radii = np.zeros(n)
        self.score_sum = np.zeros(n)
        self.score_count = np.zeros(n, dtype=np.int64)

    def _arrays(self):
        return ("grad_sum", "abs_grad_sum", "count", "max_radii", "score_sum", "score_count")

    def __len__(self) -> int:
        return len(self.grad_sum)

    def keep(self, idx) -> None:
        for name in self._arrays():
            setattr(self, name, getattr(self, name)[idx])

    def extend(self, n: int) -> None:
        for name in self._arrays():
            arr = getattr(self, name)
            setattr(self, name, np.concatenate([arr, np.zeros(n, dtype=arr.dtype)]))

    def reset(self) -> None:
        for name in self._arrays():
            getattr(self, name)[:] = 0

    def accumulate(self, viewspace, radii) -> None:
        vis = viewspace.visible
        self.grad_sum[vis] += viewspace.summed_norm[vis]
        self.abs_grad_sum[vis] += viewspace.absolute_norm[vis]
        self.count[vis] += 1
        self.max_radii[vis] = np.maximum(self.max_radii[vis], radii[vis])

    def mean_grad(self, mode: str = "abs") -> np.ndarray:
        total = self.abs_grad_sum if mode == "abs" else self.grad_sum
        return np.where(self.count > 0, total / np.maximum(self.count, 1), 0.0)


def remove_rows(cloud: GaussianCloud, optimizer, state: DensifyState, remove_mask) -> int:
    remove_mask = np.asarray(remove_mask, dtype=bool)
    n_removed = int(remove_mask.sum())
    if n_removed:
        keep = np.flatnonzero(~remove_mask)
        cloud.keep(keep)
        optimizer.keep(keep)
        state.keep(keep)
    return n_removed


def append_rows(cloud: GaussianCloud, optimizer, state: DensifyState, new: GaussianCloud) -> int:
    n = len(new)
    if n:
        cloud.extend(new)
        optimizer.extend(n)
        state.extend(n)
    return n


def check_lockstep(cloud, optimizer, state) -> None:
    if not (len(cloud) == len(optimizer) == len(state)):
        raise AssertionError(
            f"lockstep violated: cloud {len(cloud)}, optimizer {len(optimizer)}, state {len(state)}"
        )


def prune_mask(
    cloud: GaussianCloud,
    config: StrategyConfig,
    scene_extent: float,
    max_radii: Optional[np.ndarray] = None,
    size_checks: bool = False,
) -> np.ndarray:
    """Rows failing the opacity floor or, once size checks apply, the size limits."""
    mask = cloud.opacities < config.prune_opacity
    if size_checks:
        mask |= cloud.scales.max(axis=1) > config.world_size_fraction * scene_extent
        if max_radii is not None and config.max_screen_size is not None:
            mask |= max_radii > config.max_screen_size
    return mask


def prune(cloud, optimizer, state, config: StrategyConfig, scene_extent: float, size_checks: bool = False) -> int:
    """Drop transparent and oversized Gaussians; returns how many were removed."""
    mask = prune_mask(cloud, config, scene_extent, state.max_radii, size_checks)
    return remove_rows(cloud, optimizer, state, mask)


def reset_opacity(cloud: GaussianCloud, optimizer, value: float) -> None:
    capped = np.minimum(cloud.opacities, value)
    cloud.opacity_logits = logit(capped).astype(cloud.dtype)
    optimizer.reset_rows(slice(None), names=("opacity_logits",))


def headroom(n: int, cap: Optional[int]) -> float:
    return np.inf if cap is None else max(0, cap - n)


class Strategy:
    """Base densification strategy: statistics plus prune-only boundaries.

    Subclasses override :meth:`densify` for their growth logic.
    """

    kind = "none"
    uses_opacity_reset = True

    def __init__(self, config: Optional[StrategyConfig] = None):
        self.config = config or StrategyConfig(kind=self.kind)
        self.config.validate()
        self.state = DensifyState()
        self.ctx = None

    def setup(self, ctx, cloud: GaussianCloud) -> None:
        self.ctx = ctx
        self.state = DensifyState(len(cloud))

    @property
    def cap(self) -> Optional[int]:
        return self.ctx.config.gaussian_cap

    def in_window(self, step: int) -> bool:
        cfg = self.ctx.config
        return cfg.densify_start <= step <= cfg.densify_stop

    def is_boundary(self, step: int) -> bool:
        return self.in_window(step) and step % self.ctx.config.densify_interval == 0

    def size_checks(self, step: int) -> bool:
        return step > self.config.opacity_reset_interval

    def accumulation_steps(self, step: int) -> int:
        return 1

    def before_optimizer(self, step, cloud, grads, viewspace, render_output, optimizer) -> None:
        if step <= self.ctx.config.densify_stop:
            self.state.accumulate(viewspace, render_output.radii)

    def after_optimizer(self, step, cloud, optimizer) -> Optional[dict]:
        report = None
        if self.is_boundary(step):
            report = MutationReport(step=step, n_before=len(cloud))
            self.densify(step, cloud, optimizer, report)
            check_lockstep(cloud, optimizer, self.state)
            if self.uses_opacity_reset and step % self.config.opacity_reset_interval == 0:
                reset_opacity(cloud, optimizer, self.config.opacity_reset_value)
                report.opacity_reset = True
            report.n_after = len(cloud)
        self.after_structure(step, cloud, optimizer)
        if self.cap is not None and len(cloud) > self.cap:
            raise AssertionError(f"{self.kind}: {len(cloud)} Gaussians exceed the cap {self.cap}")
        return None if report is None else report.to_dict()

    def after_structure(self, step, cloud, optimizer) -> None:
        pass

    def densify(self, step, cloud, optimizer, report: MutationReport) -> None:
        report.pruned += prune(
            cloud, optimizer, self.state, self.config, self.ctx.scene_extent, self.size_checks(step)
        )
        self.state.reset()


class NoDensification(Strategy):
    """Pruning (with opacity resets) only; never adds Gaussians."""

    kind = "none"
