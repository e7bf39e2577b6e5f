import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pixel_loop_psnr, sliding_window_ssim
from splatbench.bench.metrics import psnr, ssim, ssim_with_grad
from splatbench.core import InvalidInputError


def test_psnr_identical_is_inf():
    x = np.random.default_rng(0).uniform(size=(12, 12, 3))
    assert psnr(x, x) == math.inf


def test_psnr_uniform_offset():
    x = np.full((8, 8, 3), 0.3)
    assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_psnr_matches_pixel_loop(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 7, 9, 3))
    assert psnr(a, b) == pytest.approx(pixel_loop_psnr(a, b), abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(InvalidInputError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_identity():
    x = np.random.default_rng(1).uniform(size=(16, 16, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)


def test_ssim_inverted_checkerboard_is_negative():
    board = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)
    x = np.repeat(board[..., None], 3, axis=2)
    assert ssim(x, 1.0 - x) < 0


@pytest.mark.parametrize("seed", range(4))
def test_ssim_matches_sliding_window(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(16, 16, 3))
    b = np.clip(a + rng.normal(scale=0.2, size=a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(sliding_window_ssim(a, b), abs=1e-6)


def test_ssim_grayscale_and_small_inputs():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(2, 13, 14))
    assert ssim(a, b) == pytest.approx(sliding_window_ssim(a, b), abs=1e-6)
    with pytest.raises(InvalidInputError):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


@given(st.integers(0, 2**32 - 1))
def test_ssim_bounded_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 12, 12, 3))
    s = ssim(a, b)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(size=(2, 12, 13, 3))
    _, grad = ssim_with_grad(a, b)
    grad = grad.reshape(a.shape)
    for idx in [(0, 0, 0), (5, 6, 1), (11, 12, 2), (3, 9, 0)]:
        old = a[idx]
        a[idx] = old + 1e-6
        hi = ssim(a, b)
        a[idx] = old - 1e-6
        lo = ssim(a, b)
        a[idx] = old
        fd = (hi - lo) / 2e-6
        assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-10)
