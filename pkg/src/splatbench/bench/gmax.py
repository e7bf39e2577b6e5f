"""Per-scene Gaussian budget from an uncapped AbsGS reference run, with an on-disk cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from ..densify import StrategyConfig, make_strategy
from ..init.gaussians import InitSpec
from ..init.scene import LoadedScene, build_initial_cloud
from ..optim import TrainConfig, train
from .evaluate import decode_float, encode_float, evaluate

logger = logging.getLogger(__name__)

CACHE_ENV = "SPLATBENCH_CACHE_DIR"


def cache_dir(override: Union[str, Path, None] = None) -> Path:
    """Cache root: ``override``, else ``$SPLATBENCH_CACHE_DIR``, else ``~/.cache/splatbench``."""
    if override is not None:
        return Path(override)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "splatbench"


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class GmaxResult:
    gmax: int
    key: str
    cached: bool
    test_psnr: Optional[float] = None


def reference_configs(train_config: Optional[TrainConfig], strategy_config: Optional[StrategyConfig], seed: int):
    """The uncapped training and AbsGS configs used for the reference run."""
    base = TrainConfig() if train_config is None else train_config
    tc = TrainConfig(**{**base.to_dict(), "gaussian_cap": None, "seed": seed})
    sc = StrategyConfig(**{**(strategy_config or StrategyConfig()).to_dict(), "kind": "absgs"})
    return tc, sc


def derive_gmax(
    loaded: LoadedScene,
    train_config: Optional[TrainConfig] = None,
    strategy_config: Optional[StrategyConfig] = None,
    seed: int = 0,
    cache: Union[str, Path, None, bool] = None,
) -> GmaxResult:
    """Final Gaussian count of an uncapped AbsGS run from the SfM points.

    ``cache=False`` disables caching; otherwise results are stored under
    :func:`cache_dir` keyed by scene id, strategy config, training config and seed.
    """
    tc, sc = reference_configs(train_config, strategy_config, seed)
    scene_id = loaded.scene.scene_id
    key = config_hash({"scene": scene_id, "strategy": sc.to_dict(), "train": tc.to_dict(), "seed": seed})
    path = None
    if cache is not False:
        path = cache_dir(None if cache in (None, True) else cache) / "gmax" / f"{scene_id}-{key}.json"
        if path.exists():
            data = json.loads(path.read_text())
            logger.info("G_max for %s from cache: %d", scene_id, data["gmax"])
            return GmaxResult(int(data["gmax"]), key, True, decode_float(data.get("test_psnr")))

    init = build_initial_cloud(InitSpec("sfm", "match-sfm", seed=seed), loaded)
    result = train(loaded.scene, loaded.images(loaded.scene.train_ids), init, make_strategy(sc), tc)
    gmax = len(result.cloud)
    test_psnr = None
    if loaded.scene.test_ids:
        metrics = evaluate(result.cloud, loaded.scene, loaded.images(loaded.scene.test_ids), "test", tc.background)
        test_psnr = metrics.psnr
    logger.info("G_max for %s derived: %d", scene_id, gmax)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"scene": scene_id, "gmax": gmax, "key": key, "test_psnr": encode_float(test_psnr)}))
        tmp.replace(path)
    return GmaxResult(gmax, key, False, test_psnr)
