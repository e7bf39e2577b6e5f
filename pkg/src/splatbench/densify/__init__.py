"""Pluggable densification strategies, all respecting a hard Gaussian cap."""

from __future__ import annotations

from typing import Union

from ..core import InvalidInputError
from .absgs import AbsGSStrategy, select_candidates, split_children
from .base import (
    DensifyState,
    MutationReport,
    NoDensification,
    Strategy,
    StrategyConfig,
    check_lockstep,
    prune,
    prune_mask,
    reset_opacity,
)
from .idhfr import IDHFRStrategy, edge_aware_scores, edge_map, growth_schedule, sample_by_score
from .mcmc import MCMCStrategy, relocation_params

STRATEGIES = {
    "absgs": AbsGSStrategy,
    "mcmc": MCMCStrategy,
    "idhfr": IDHFRStrategy,
    "none": NoDensification,
}


def make_strategy(spec: Union[str, StrategyConfig, dict]) -> Strategy:
    """Build a strategy from its kind name, a config, or a config mapping."""
    if isinstance(spec, str):
        spec = StrategyConfig(kind=spec)
    elif isinstance(spec, dict):
        spec = StrategyConfig.from_dict(spec)
    spec.validate()
    try:
        cls = STRATEGIES[spec.kind]
    except KeyError:
        raise InvalidInputError(f"unknown strategy kind {spec.kind!r}") from None
    return cls(spec)


__all__ = [
    "AbsGSStrategy",
    "DensifyState",
    "IDHFRStrategy",
    "MCMCStrategy",
    "MutationReport",
    "NoDensification",
    "STRATEGIES",
    "Strategy",
    "StrategyConfig",
    "check_lockstep",
    "edge_aware_scores",
    "edge_map",
    "growth_schedule",
    "make_strategy",
    "prune",
    "prune_mask",
    "relocation_params",
    "reset_opacity",
    "sample_by_score",
    "select_candidates",
    "split_children",
]
