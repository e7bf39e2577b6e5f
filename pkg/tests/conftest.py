from __future__ import annotations

import contextlib
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from splatbench.bench.synthetic import make_scene  # noqa: E402
from splatbench.core import Camera, GaussianCloud, rgb_to_sh_dc  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE: list = []


@pytest.fixture
def criterion():
    """Context manager recording a PASS/FAIL line for an acceptance criterion."""

    @contextlib.contextmanager
    def record(number, title):
        details = []
        try:
            yield details
        except BaseException as exc:
            _ACCEPTANCE.append((number, title, False, "; ".join(details + [str(exc).splitlines()[0] if str(exc) else type(exc).__name__])))
            raise
        else:
            _ACCEPTANCE.append((number, title, True, "; ".join(details)))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_scene():
    """A small synthetic scene: 20 Gaussians seen by 8 views at 32x32."""
    return make_scene(n_gaussians=20, n_views=8, size=32, seed=3)


def random_cloud(rng, n: int, sh_degree: int = 0, spread: float = 0.4) -> GaussianCloud:
    means = rng.normal(size=(n, 3)) * spread
    log_scales = np.log(rng.uniform(0.15, 0.5, size=(n, 3)))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    op = rng.uniform(-1.5, 1.5, size=n)
    sh = rng.normal(size=(n, (sh_degree + 1) ** 2, 3)) * 0.2
    sh[:, 0] = rgb_to_sh_dc(rng.uniform(0.2, 0.8, size=(n, 3)))
    return GaussianCloud(means, log_scales, q, op, sh)


def front_camera(size: int = 8, focal: float = 10.0, distance: float = 4.0, jitter=None) -> Camera:
    eye = np.array([0.0, 0.0, -distance]) if jitter is None else np.array([0.0, 0.0, -distance]) + jitter
    return Camera.look_at(eye, (0.0, 0.0, 0.0), up=(0.0, -1.0, 0.0), fx=focal, width=size, height=size)
