"""Results document, flat CSV tables and curve aggregation over benchmark runs."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from ..core import InvalidInputError
from .evaluate import encode_float
from .matrix import COMPLETED, LPIPS_REASON, BenchmarkRun

SCHEMA_VERSION = 1
METRICS = ("train_psnr", "train_ssim", "test_psnr", "test_ssim", "lpips")
TABLE_COLUMNS = (
    "scene",
    "strategy",
    "init",
    "size_mode",
    "size_value",
    "n_init",
    "noise",
    "cap_fraction",
    "cap",
    "gmax",
    "seed",
    "final_n",
    "max_n",
    "wall_time",
) + METRICS


class MismatchedCapError(InvalidInputError):
    """Raised when cells with different Gaussian budgets would share one curve."""


def flat_row(run: BenchmarkRun) -> dict:
    res = run.results
    test = res.test
    return {
        "scene": run.scene_id,
        "strategy": run.strategy.kind,
        "init": run.init.source,
        "size_mode": run.init.size_mode,
        "size_value": run.init.size_value,
        "n_init": run.n_init,
        "noise": run.init.noise,
        "cap_fraction": run.cap_fraction,
        "cap": run.cap,
        "gmax": run.gmax,
        "seed": run.seed,
        "final_n": res.final_n,
        "max_n": res.max_n,
        "wall_time": res.wall_time,
        "train_psnr": res.train.psnr,
        "train_ssim": res.train.ssim,
        "test_psnr": None if test is None else test.psnr,
        "test_ssim": None if test is None else test.ssim,
        "lpips": res.lpips,
    }


def completed(runs: Sequence[BenchmarkRun]) -> list:
    return [r for r in runs if r.status == COMPLETED and r.results is not None]


def _sorted_rows(runs, order) -> list:
    rows = [flat_row(r) for r in completed(runs)]
    return sorted(rows, key=lambda row: tuple(_sort_key(row[k]) for k in order))


def _sort_key(v):
    return (0, "") if v is None else (1, v) if isinstance(v, (int, float)) else (2, str(v))


def size_table(runs) -> list:
    """One row per completed run, ordered for "metric vs init size per strategy" curves."""
    return _sorted_rows(runs, ("scene", "strategy", "init", "cap_fraction", "noise", "n_init", "seed"))


def noise_table(runs) -> list:
    """One row per completed run, ordered for "metric vs noise level per strategy" curves."""
    return _sorted_rows(runs, ("scene", "strategy", "init", "cap_fraction", "n_init", "noise", "seed"))


def curves(runs, x: str = "n_init", metric: str = "test_psnr") -> dict:
    """``{(scene, strategy, init, fixed axis): [(x, mean metric over seeds), ...]}``.

    ``x`` is ``"n_init"`` or ``"noise"``; the other of the two is held fixed
    per curve.  Every point of a curve must share one cap.
    """
    if x not in ("n_init", "noise"):
        raise InvalidInputError("x must be 'n_init' or 'noise'")
    if metric not in METRICS:
        raise InvalidInputError(f"unknown metric {metric!r}")
    fixed = "noise" if x == "n_init" else "n_init"
    groups = defaultdict(lambda: defaultdict(list))
    caps = defaultdict(set)
    for row in (flat_row(r) for r in completed(runs)):
        key = (row["scene"], row["strategy"], row["init"], row["cap_fraction"], row[fixed])
        caps[key].add(row["cap"])
        if row[metric] is not None:
            groups[key][row[x]].append(row[metric])
    for key, seen in caps.items():
        if len(seen) > 1:
            raise MismatchedCapError(f"curve {key} mixes caps {sorted(seen)}")
    return {key: [(xv, _mean(vals)) for xv, vals in sorted(pts.items())] for key, pts in groups.items()}


def _mean(values) -> float:
    values = [float(v) for v in values]
    return math.fsum(values) / len(values) if values else math.nan


def summary(runs, metric: str = "test_psnr") -> dict:
    """Per-scene means per cell group and two cross-scene means.

    ``mean_of_scene_means`` weights scenes equally; ``pooled_mean`` weights
    every run equally.
    """
    per_scene = defaultdict(lambda: defaultdict(list))
    for row in (flat_row(r) for r in completed(runs)):
        if row[metric] is None:
            continue
        size = row["size_mode"] if row["size_value"] is None else f"{row['size_mode']}={row['size_value']:g}"
        group = f"{row['strategy']}|{row['init']}|{size}|noise={row['noise']:g}|cap={row['cap_fraction']:g}"
        per_scene[group][row["scene"]].append(row[metric])
    out = {}
    for group, scenes in sorted(per_scene.items()):
        scene_means = {s: _mean(v) for s, v in sorted(scenes.items())}
        out[group] = {
            "per_scene": {s: encode_float(m) for s, m in scene_means.items()},
            "mean_of_scene_means": encode_float(_mean(scene_means.values())),
            "pooled_mean": encode_float(_mean([x for v in scenes.values() for x in v])),
        }
    return {"metric": metric, "groups": out}


def to_document(runs: Sequence[BenchmarkRun]) -> dict:
    if not runs:
        raise InvalidInputError("a report needs at least one run")
    return {
        "schema_version": SCHEMA_VERSION,
        "lpips_reason": LPIPS_REASON,
        "counts": {"runs": len(runs), "completed": len(completed(runs))},
        "runs": [r.to_dict() for r in runs],
        "summary": summary(runs),
    }


def serialize(runs: Sequence[BenchmarkRun]) -> str:
    return json.dumps(to_document(runs), indent=2, sort_keys=True, allow_nan=False)


def parse(text: str) -> list:
    data = json.loads(text)
    if data.get("schema_version") != SCHEMA_VERSION:
        raise InvalidInputError(f"unsupported results schema {data.get('schema_version')!r}")
    return [BenchmarkRun.from_dict(r) for r in data["runs"]]


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row[k]) for k in TABLE_COLUMNS})


def _csv_value(v):
    if v is None:
        return ""
    return encode_float(v) if isinstance(v, float) else v


def write_report(runs: Sequence[BenchmarkRun], out_dir) -> dict:
    """Write ``results.json``, ``by_size.csv`` and ``by_noise.csv``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"results": out / "results.json", "by_size": out / "by_size.csv", "by_noise": out / "by_noise.csv"}
    paths["results"].write_text(serialize(runs))
    _write_csv(paths["by_size"], size_table(runs))
    _write_csv(paths["by_noise"], noise_table(runs))
    return paths
