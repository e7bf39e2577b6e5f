"""PSNR and SSIM, with the SSIM gradient used by the photometric loss."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core import InvalidInputError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


_G = gaussian_window()


def _as_hwc(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    return img


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with the SSIM window over axes 0 and 1."""
    x = sliding_window_view(x, len(_G), axis=0) @ _G
    return sliding_window_view(x, len(_G), axis=1) @ _G


def _filter_adjoint(g: np.ndarray) -> np.ndarray:
    pad = len(_G) - 1
    g = np.pad(g, ((pad, pad), (pad, pad), (0, 0)))
    # the window is symmetric, so the adjoint is the same correlation
    return _filter_valid(g)


def _check_pair(a, b):
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for images in [0, 1]; ``inf`` for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_terms(x, y):
    mx = _filter_valid(x)
    my = _filter_valid(y)
    sxx = _filter_valid(x * x) - mx * mx
    syy = _filter_valid(y * y) - my * my
    sxy = _filter_valid(x * y) - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    return mx, my, a1, a2, b1, b2


def ssim(a, b) -> float:
    """Mean SSIM over all valid 11x11 window positions and channels."""
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise InvalidInputError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    _, _, a1, a2, b1, b2 = _ssim_terms(a, b)
    return float(np.mean(a1 * a2 / (b1 * b2)))


def ssim_with_grad(x, y):
    """SSIM of ``x`` against ``y`` and its gradient w.r.t. ``x``."""
    x, y = _check_pair(x, y)
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise InvalidInputError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    mx, my, a1, a2, b1, b2 = _ssim_terms(x, y)
    den = b1 * b2
    s = a1 * a2 / den
    n = s.size
    ds_dmx = 2 * my * a2 / den - s * 2 * mx / b1
    ds_dsxx = -s / b2
    ds_dsxy = 2 * a1 / den
    # express through the filtered moments f(x), f(x^2), f(xy)
    d_m1 = (ds_dmx - 2 * mx * ds_dsxx - my * ds_dsxy) / n
    d_m2 = ds_dsxx / n
    d_m3 = ds_dsxy / n
    grad = _filter_adjoint(d_m1) + 2 * x * _filter_adjoint(d_m2) + y * _filter_adjoint(d_m3)
    return float(s.mean()), grad
