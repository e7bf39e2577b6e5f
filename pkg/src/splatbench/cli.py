"""Command-line entry point: ``splatbench <verb> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import yaml

from .core import InvalidInputError

logger = logging.getLogger("splatbench")


def _train_overrides(args) -> dict:
    from .optim import TrainConfig

    data = {}
    if getattr(args, "train_config", None):
        loaded = yaml.safe_load(Path(args.train_config).read_text()) or {}
        if not isinstance(loaded, dict):
            raise InvalidInputError(f"{args.train_config}: expected a mapping")
        data.update(loaded)
    if getattr(args, "steps", None) is not None:
        data["total_steps"] = args.steps
        # keep the default densification schedule proportional to the run length
        default = TrainConfig()
        f = args.steps / default.total_steps
        data.setdefault("densify_start", round(default.densify_start * f))
        data.setdefault("densify_interval", max(1, round(default.densify_interval * f)))
    if getattr(args, "threads", None) is not None:
        data["threads"] = args.threads
    return data


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-config", help="YAML file of training options")
    p.add_argument("--steps", type=int, help="total optimisation steps (the densification schedule scales with it)")
    p.add_argument("--threads", type=int, help="worker threads for the rasterizer (1 for bitwise determinism)")
    p.add_argument("--holdout-every", type=int, default=8, help="every k-th view is a test view (0: none)")


def cmd_derive_gmax(args) -> int:
    from .bench.gmax import derive_gmax
    from .init.scene import load_scene
    from .optim import TrainConfig

    loaded = load_scene(args.scene_dir, args.holdout_every)
    res = derive_gmax(
        loaded,
        TrainConfig(**_train_overrides(args)),
        seed=args.seed,
        cache=False if args.no_cache else args.cache_dir,
    )
    print(json.dumps({"scene": loaded.scene.scene_id, "gmax": res.gmax, "key": res.key, "cached": res.cached}))
    return 0


def cmd_init(args) -> int:
    from .init.gaussians import InitSpec
    from .init.ply import write_gaussian_ply
    from .init.scene import build_initial_cloud, load_scene

    loaded = load_scene(args.scene_dir, args.holdout_every)
    spec = InitSpec.parse(args.spec, seed=args.seed)
    cloud = build_initial_cloud(spec, loaded, args.gmax, cap=args.cap, sh_degree=args.sh_degree)
    write_gaussian_ply(args.output, cloud)
    print(json.dumps({"init": spec.label, "n": len(cloud), "output": str(args.output)}))
    return 0


def cmd_monodepth(args) -> int:
    from .init.ply import write_point_ply
    from .init.scene import load_scene
    from .monodepth.pipeline import MonodepthConfig, load_depths, monodepth_pipeline

    loaded = load_scene(args.scene_dir, args.holdout_every)
    ids = [c.id for c in loaded.scene.cameras]
    depths = load_depths(args.depth_dir, ids)
    config = MonodepthConfig(camera_limit=args.camera_limit, seed=args.seed, refine=not args.no_refine)
    cloud, report = monodepth_pipeline(loaded.scene, loaded.sfm_points, depths, loaded.images(ids), config)
    write_point_ply(args.output, cloud)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2))
    print(json.dumps({"points": len(cloud), "before_filter": report.points_before_filter, "output": str(args.output)}))
    return 0


def cmd_train(args) -> int:
    from .bench.evaluate import evaluate
    from .bench.gmax import derive_gmax
    from .bench.matrix import cap_for
    from .densify import StrategyConfig, make_strategy
    from .init.gaussians import InitSpec
    from .init.ply import write_gaussian_ply
    from .init.scene import build_initial_cloud, load_scene
    from .optim import TrainConfig, train

    loaded = load_scene(args.scene_dir, args.holdout_every)
    overrides = _train_overrides(args)
    gmax = args.gmax
    cap = args.cap
    if cap is None and args.cap_fraction is not None:
        if gmax is None:
            gmax = derive_gmax(loaded, TrainConfig(**overrides), seed=args.seed).gmax
        cap = cap_for(gmax, args.cap_fraction)
    spec = InitSpec.parse(args.init, seed=args.seed)
    cloud = build_initial_cloud(spec, loaded, gmax if gmax is not None else cap, cap=cap)
    config = TrainConfig(**{**overrides, "gaussian_cap": cap, "seed": args.seed})
    strategy = make_strategy(StrategyConfig(kind=args.strategy))
    result = train(loaded.scene, loaded.images(loaded.scene.train_ids), cloud, strategy, config, log_path=args.log)
    summary = {"init": spec.label, "strategy": args.strategy, "cap": cap, "n_init": len(cloud), "final_n": len(result.cloud)}
    for split in ("train", "test"):
        ids = loaded.scene.train_ids if split == "train" else loaded.scene.test_ids
        if ids:
            m = evaluate(result.cloud, loaded.scene, loaded.images(ids), split, config.background)
            summary[f"{split}_psnr"], summary[f"{split}_ssim"] = m.psnr, m.ssim
    if args.output:
        write_gaussian_ply(args.output, result.cloud)
    print(json.dumps(summary))
    return 0


def cmd_bench(args) -> int:
    from .bench.matrix import COMPLETED, MatrixConfig, run_matrix_config
    from .bench.report import write_report

    config = MatrixConfig.from_yaml(args.matrix_config)
    if args.output:
        config.output = args.output

    def progress(run):
        line = f"{run.status:9s} {run.label}"
        if run.results is not None and run.results.test is not None:
            line += f" test_psnr={run.results.test.psnr:.3f} N={run.results.final_n}"
        print(line, flush=True)

    runs = run_matrix_config(config, gmax_cache=args.cache_dir, progress=progress)
    paths = write_report(runs, config.output)
    done = sum(r.status == COMPLETED for r in runs)
    print(f"{done}/{len(runs)} cells completed; results in {paths['results']}")
    return 0 if done == len(runs) else 1


def cmd_synth(args) -> int:
    from .bench.synthetic import make_scene
    from .init.scene import save_scene

    syn = make_scene(args.gaussians, args.views, args.size, seed=args.seed)
    root = save_scene(args.out_dir, syn.scene.cameras, syn.images, syn.points, binary=not args.text)
    print(json.dumps({"scene": str(root), "views": len(syn.scene.cameras), "points": len(syn.points)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatbench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive-gmax", help="derive the per-scene Gaussian budget")
    p.add_argument("scene_dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache-dir", help="cache root (default: $SPLATBENCH_CACHE_DIR or ~/.cache/splatbench)")
    p.add_argument("--no-cache", action="store_true")
    _add_train_options(p)
    p.set_defaults(func=cmd_derive_gmax)

    p = sub.add_parser("init", help="build an initial Gaussian cloud and write it as PLY")
    p.add_argument("spec", help="source[=path][:size][@noise], e.g. sfm, random:2000@0.01")
    p.add_argument("scene_dir")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--gmax", type=int, help="budget used by fractional sizes")
    p.add_argument("--cap", type=int, help="clamp the size to this count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sh-degree", type=int, default=0)
    p.add_argument("--holdout-every", type=int, default=8)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("monodepth", help="dense point cloud from predicted depth maps")
    p.add_argument("scene_dir")
    p.add_argument("--depth-dir", required=True, help="directory of <camera id>.pfm depth maps")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--camera-limit", type=int, default=300)
    p.add_argument("--no-refine", action="store_true", help="skip the piecewise-linear refinement")
    p.add_argument("--report", help="write the per-image report as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout-every", type=int, default=8)
    p.set_defaults(func=cmd_monodepth)

    p = sub.add_parser("train", help="train one configuration and report metrics")
    p.add_argument("scene_dir")
    p.add_argument("--init", default="sfm", help="init spec, as for the init verb")
    p.add_argument("--strategy", default="absgs", choices=("absgs", "mcmc", "idhfr", "none"))
    p.add_argument("--cap", type=int, help="hard Gaussian cap")
    p.add_argument("--cap-fraction", type=float, help="cap as a fraction of G_max")
    p.add_argument("--gmax", type=int, help="known G_max (skips the derivation)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="per-step NDJSON log path")
    p.add_argument("-o", "--output", help="write the trained cloud as PLY")
    _add_train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run a benchmark matrix described by a YAML file")
    p.add_argument("matrix_config")
    p.add_argument("--output", help="override the output directory")
    p.add_argument("--cache-dir", help="G_max cache root")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic ground-truth scene in COLMAP layout")
    p.add_argument("out_dir")
    p.add_argument("--gaussians", type=int, default=100)
    p.add_argument("--views", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--text", action="store_true", help="write the text model instead of binary")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
