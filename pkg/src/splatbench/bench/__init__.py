"""Metrics, evaluation, budget derivation, the run matrix and reporting.

Only the metrics are imported eagerly: the training loop depends on them,
while the orchestration modules depend on the training loop.
"""

import importlib

from .metrics import psnr, ssim

_LAZY = {
    "SplitMetrics": "evaluate",
    "evaluate": "evaluate",
    "CACHE_ENV": "gmax",
    "GmaxResult": "gmax",
    "cache_dir": "gmax",
    "derive_gmax": "gmax",
    "BenchmarkRun": "matrix",
    "MatrixConfig": "matrix",
    "RunResults": "matrix",
    "enumerate_cells": "matrix",
    "run_cell": "matrix",
    "run_matrix": "matrix",
    "run_matrix_config": "matrix",
    "MismatchedCapError": "report",
    "curves": "report",
    "noise_table": "report",
    "parse": "report",
    "serialize": "report",
    "size_table": "report",
    "summary": "report",
    "write_report": "report",
}


def __getattr__(name):
    if name in _LAZY:
        return getattr(importlib.import_module(f".{_LAZY[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = ["psnr", "ssim", *_LAZY]
