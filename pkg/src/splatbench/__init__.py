"""Benchmark of initialization x densification strategies for 3D Gaussian splatting."""

import os

# TBB in the base image is too old for numba; workqueue is always available.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
