"""The init x strategy x size x noise x cap run matrix, with per-cell caching."""

from __future__ import annotations

import itertools
import json
import logging
import math
import re
import time
import traceback
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import yaml

from ..core import InvalidInputError
from ..densify import StrategyConfig, make_strategy
from ..init.edgs import read_edgs
from ..init.gaussians import InitSpec, parse_size
from ..init.ply import read_point_ply
from ..init.scene import LoadedScene, build_initial_cloud, load_scene
from ..optim import TrainConfig, train
from .evaluate import SplitMetrics, decode_float, evaluate
from .gmax import config_hash, derive_gmax

logger = logging.getLogger(__name__)

LPIPS_REASON = "not computed: LPIPS needs a pretrained network, which this package does not ship"
COMPLETED = "completed"
FAILED = "failed"
PENDING = "pending"


@dataclass
class RunResults:
    train: SplitMetrics
    test: Optional[SplitMetrics]
    final_n: int
    max_n: int
    wall_time: float
    log_path: Optional[str]
    lpips: Optional[float] = None
    lpips_reason: str = LPIPS_REASON

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "test": None if self.test is None else self.test.to_dict(),
            "final_n": self.final_n,
            "max_n": self.max_n,
            "wall_time": self.wall_time,
            "log_path": self.log_path,
            "lpips": self.lpips,
            "lpips_reason": self.lpips_reason,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunResults":
        test = data["test"]
        return cls(
            SplitMetrics.from_dict(data["train"]),
            None if test is None else SplitMetrics.from_dict(test),
            int(data["final_n"]),
            int(data["max_n"]),
            float(data["wall_time"]),
            data["log_path"],
            decode_float(data["lpips"]),
            data["lpips_reason"],
        )


@dataclass
class BenchmarkRun:
    """One matrix cell. ``results`` is set only once the cell has completed."""

    scene_id: str
    init: InitSpec
    strategy: StrategyConfig
    gmax: int
    cap_fraction: float
    seed: int
    n_init: Optional[int] = None
    status: str = PENDING
    error: Optional[str] = None
    results: Optional[RunResults] = None
    train_config: dict = field(default_factory=dict)

    @property
    def cap(self) -> int:
        return cap_for(self.gmax, self.cap_fraction)

    @property
    def key(self) -> str:
        return config_hash(
            {
                "scene": self.scene_id,
                "init": self.init.to_dict(),
                "strategy": self.strategy.to_dict(),
                "gmax": self.gmax,
                "cap_fraction": self.cap_fraction,
                "seed": self.seed,
                "train": self.train_config,
            }
        )

    @property
    def label(self) -> str:
        return f"{self.scene_id}|{self.init.label}|{self.strategy.kind}|cap={self.cap_fraction:g}|seed={self.seed}"

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "scene_id": self.scene_id,
            "init": self.init.to_dict(),
            "strategy": self.strategy.to_dict(),
            "gmax": self.gmax,
            "cap_fraction": self.cap_fraction,
            "cap": self.cap,
            "seed": self.seed,
            "n_init": self.n_init,
            "status": self.status,
            "error": self.error,
            "results": None if self.results is None else self.results.to_dict(),
            "train_config": self.train_config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkRun":
        results = data["results"]
        return cls(
            data["scene_id"],
            InitSpec(**data["init"]),
            StrategyConfig.from_dict(data["strategy"]),
            int(data["gmax"]),
            float(data["cap_fraction"]),
            int(data["seed"]),
            data["n_init"],
            data["status"],
            data["error"],
            None if results is None else RunResults.from_dict(results),
            dict(data["train_config"]),
        )


def cap_for(gmax: int, fraction: float) -> int:
    return max(1, int(math.floor(fraction * gmax + 1e-9)))


@dataclass
class MatrixConfig:
    """The axes of a benchmark matrix, typically read from a YAML file."""

    scenes: list
    inits: list = field(default_factory=lambda: ["sfm"])
    strategies: list = field(default_factory=lambda: ["absgs", "mcmc", "idhfr"])
    sizes: list = field(default_factory=lambda: ["match-sfm"])
    noise: list = field(default_factory=lambda: [0.0])
    cap_fractions: list = field(default_factory=lambda: [1.0])
    seeds: list = field(default_factory=lambda: [0])
    train: dict = field(default_factory=dict)
    holdout_every: int = 8
    output: str = "bench-results"
    gmax: dict = field(default_factory=dict)  # scene id -> known G_max, skips the derivation
    exclude: list = field(default_factory=list)  # partial cell descriptions to skip

    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[Path] = None) -> "MatrixConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown matrix keys: {sorted(unknown)}")
        if "scenes" not in data or not data["scenes"]:
            raise InvalidInputError("matrix config needs at least one scene")
        cfg = cls(**data)
        if base_dir is not None:
            cfg.scenes = [str(base_dir / s) if not Path(s).is_absolute() else s for s in cfg.scenes]
            if not Path(cfg.output).is_absolute():
                cfg.output = str(base_dir / cfg.output)
        for name in ("inits", "strategies", "sizes", "noise", "cap_fractions", "seeds"):
            if not isinstance(getattr(cfg, name), list) or not getattr(cfg, name):
                raise InvalidInputError(f"matrix axis {name!r} must be a nonempty list")
        return cfg

    @classmethod
    def from_yaml(cls, path) -> "MatrixConfig":
        path = Path(path)
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise InvalidInputError(f"{path}: expected a mapping at the top level")
        return cls.from_dict(data, path.parent)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)


def strategy_config(entry) -> StrategyConfig:
    if isinstance(entry, StrategyConfig):
        return entry
    if isinstance(entry, str):
        return StrategyConfig(kind=entry)
    return StrategyConfig.from_dict(dict(entry))


def init_spec(entry, size, noise: float, seed: int) -> InitSpec:
    """Combine an init source entry with one size and noise level from the axes."""
    base = entry if isinstance(entry, InitSpec) else InitSpec.parse(str(entry))
    mode, value = parse_size(size)
    spec = InitSpec(base.source, mode, value, float(noise), seed, base.path)
    spec.validate()
    return spec


def _matches(run: BenchmarkRun, pattern: dict) -> bool:
    flat = {
        "scene": run.scene_id,
        "source": run.init.source,
        "size": run.init.size_mode if run.init.size_value is None else run.init.size_value,
        "noise": run.init.noise,
        "strategy": run.strategy.kind,
        "cap_fraction": run.cap_fraction,
        "seed": run.seed,
    }
    unknown = set(pattern) - set(flat)
    if unknown:
        raise InvalidInputError(f"unknown exclude keys: {sorted(unknown)}")
    return all(flat[k] == v or str(flat[k]) == str(v) for k, v in pattern.items())


def enumerate_cells(
    scene_ids: Sequence[str],
    gmax: dict,
    inits,
    strategies,
    sizes,
    noise,
    cap_fractions,
    seeds,
    train_config: Optional[dict] = None,
    exclude: Sequence[dict] = (),
) -> list:
    """Every cell of the Cartesian product, minus those matching an ``exclude`` pattern."""
    train_config = dict(train_config or {})
    cells = []
    for scene_id, init, strat, size, sigma, frac, seed in itertools.product(
        scene_ids, inits, strategies, sizes, noise, cap_fractions, seeds
    ):
        run = BenchmarkRun(
            scene_id,
            init_spec(init, size, sigma, seed),
            strategy_config(strat),
            int(gmax[scene_id]),
            float(frac),
            int(seed),
            train_config=train_config,
        )
        if not any(_matches(run, p) for p in exclude):
            cells.append(run)
    return cells


def _source_size(spec: InitSpec, loaded: LoadedScene) -> Optional[int]:
    if spec.source == "sfm":
        return len(loaded.sfm_points)
    if spec.source == "dense_ply" and spec.path:
        return len(read_point_ply(spec.path))
    if spec.source == "edgs_file" and spec.path:
        return len(read_edgs(spec.path))
    return None


def _available_sizes(inits, loaded: LoadedScene) -> list:
    """Sizes of the listed init sources, used by the ``compare`` size mode."""
    sizes = []
    for entry in inits:
        spec = entry if isinstance(entry, InitSpec) else InitSpec.parse(str(entry))
        n = _source_size(spec, loaded)
        if n is not None:
            sizes.append(n)
    return sizes


def run_cell(run: BenchmarkRun, loaded: LoadedScene, cell_dir: Optional[Path], available=()) -> BenchmarkRun:
    """Train and evaluate one cell in place; failures are recorded, never raised."""
    start = time.perf_counter()
    try:
        cap = run.cap
        cloud = build_initial_cloud(run.init, loaded, run.gmax, available, cap=cap)
        run.n_init = len(cloud)
        tc = TrainConfig(**{**run.train_config, "gaussian_cap": cap, "seed": run.seed})
        log_path = None if cell_dir is None else cell_dir / "log.ndjson"
        if cell_dir is not None:
            cell_dir.mkdir(parents=True, exist_ok=True)
        result = train(loaded.scene, loaded.images(loaded.scene.train_ids), cloud, make_strategy(run.strategy), tc)
        if log_path is not None:
            result.write_log(log_path)
        train_m = evaluate(result.cloud, loaded.scene, loaded.images(loaded.scene.train_ids), "train", tc.background)
        test_m = None
        if loaded.scene.test_ids:
            test_m = evaluate(result.cloud, loaded.scene, loaded.images(loaded.scene.test_ids), "test", tc.background)
        run.results = RunResults(
            train_m,
            test_m,
            len(result.cloud),
            result.max_gaussians,
            time.perf_counter() - start,
            None if log_path is None else str(log_path),
        )
        if run.results.max_n > cap:
            raise AssertionError(f"run exceeded its cap: {run.results.max_n} > {cap}")
        run.status, run.error = COMPLETED, None
    except Exception as exc:  # one broken cell must not stop the matrix
        logger.error("cell %s failed: %s", run.label, exc)
        logger.debug("%s", traceback.format_exc())
        run.status, run.error, run.results = FAILED, f"{type(exc).__name__}: {exc}", None
    return run


def _cell_path(output: Path, run: BenchmarkRun) -> Path:
    safe = re.sub(r"[^A-Za-z0-9_.-]+", "_", run.scene_id)
    return output / "runs" / f"{safe}-{run.key}"


def load_cached(output: Path, run: BenchmarkRun) -> Optional[BenchmarkRun]:
    path = _cell_path(output, run) / "run.json"
    if not path.exists():
        return None
    cached = BenchmarkRun.from_dict(json.loads(path.read_text()))
    return cached if cached.status == COMPLETED else None


def run_matrix(
    scenes: Sequence[LoadedScene],
    inits,
    strategies,
    sizes=("match-sfm",),
    noise=(0.0,),
    cap_fractions=(1.0,),
    seeds=(0,),
    train_config: Optional[dict] = None,
    gmax: Optional[dict] = None,
    output=None,
    exclude: Sequence[dict] = (),
    gmax_cache=None,
    progress: Optional[Callable[[BenchmarkRun], None]] = None,
) -> list:
    """Run every cell of the product, reusing completed cells found under ``output``.

    G_max is taken from ``gmax`` (scene id -> count) when given, else derived
    with the same training config from the SfM initialisation.
    """
    train_config = dict(train_config or {})
    by_id = {s.scene.scene_id: s for s in scenes}
    gmax = dict(gmax or {})
    for sid, loaded in by_id.items():
        if sid not in gmax:
            gmax[sid] = derive_gmax(loaded, TrainConfig(**train_config), cache=gmax_cache).gmax
    cells = enumerate_cells(
        list(by_id), gmax, inits, strategies, sizes, noise, cap_fractions, seeds, train_config, exclude
    )
    output = None if output is None else Path(output)
    available = {sid: _available_sizes(inits, loaded) for sid, loaded in by_id.items()}
    runs = []
    for run in cells:
        cached = None if output is None else load_cached(output, run)
        if cached is not None:
            logger.info("cell %s: cached", run.label)
            runs.append(cached)
            continue
        cell_dir = None if output is None else _cell_path(output, run)
        run_cell(run, by_id[run.scene_id], cell_dir, available[run.scene_id])
        if cell_dir is not None:
            cell_dir.mkdir(parents=True, exist_ok=True)
            (cell_dir / "run.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True))
        if progress is not None:
            progress(run)
        runs.append(run)
    return runs


def run_matrix_config(config: MatrixConfig, gmax_cache=None, progress=None) -> list:
    scenes = [load_scene(s, config.holdout_every) for s in config.scenes]
    return run_matrix(
        scenes,
        config.inits,
        config.strategies,
        config.sizes,
        config.noise,
        config.cap_fractions,
        config.seeds,
        config.train,
        config.gmax,
        config.output,
        config.exclude,
        gmax_cache,
        progress,
    )
