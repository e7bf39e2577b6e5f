"""Tile-based Gaussian rasterization with an analytic backward pass.

The forward pass projects every Gaussian with the local affine (EWA)
approximation, bins the resulting 2D splats into 16x16 pixel tiles, sorts
them globally by camera-space depth and alpha-composites front to back.
The backward pass walks each pixel's contributor list in reverse and then
chains the screen-space gradients back to the 3D parameters.

Per-(tile, Gaussian) gradient buffers are reduced in a fixed order, so the
results do not depend on the number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from numba import prange

from .core import Camera, GaussianCloud, InvalidInputError, sh_basis, sh_basis_grad


@dataclass(frozen=True)
class RasterConfig:
    tile_size: int = 16
    near: float = 0.01
    dilation: float = 0.3
    radius_sigma: float = 3.0
    alpha_max: float = 0.99
    alpha_min: float = 1.0 / 255.0
    transmittance_eps: float = 1e-4
    max_image_size: int = 8192


DEFAULT_RASTER = RasterConfig()


@dataclass
class ViewspaceGrads:
    """Screen-space positional gradients of one rendered view, in NDC units.

    ``summed`` is the plain per-view sum of per-pixel gradients, ``absolute``
    sums the per-pixel absolute values of each component.
    """

    summed: np.ndarray
    absolute: np.ndarray
    visible: np.ndarray

    @property
    def summed_norm(self) -> np.ndarray:
        return np.linalg.norm(self.summed, axis=1)

    @property
    def absolute_norm(self) -> np.ndarray:
        return np.linalg.norm(self.absolute, axis=1)


@dataclass
class RenderOutput:
    image: np.ndarray
    final_transmittance: np.ndarray
    touched: np.ndarray
    radii: np.ndarray
    background: np.ndarray
    # retained for the backward pass
    mean2d: np.ndarray = field(repr=False)
    conic: np.ndarray = field(repr=False)
    opacity: np.ndarray = field(repr=False)
    rgb: np.ndarray = field(repr=False)
    color_clamped: np.ndarray = field(repr=False)
    tile_offsets: np.ndarray = field(repr=False)
    tile_list: np.ndarray = field(repr=False)
    pixel_end: np.ndarray = field(repr=False)
    config: RasterConfig = field(repr=False)
    camera_id: str = ""
    num_gaussians: int = 0
    sh_degree: int = 0


# --- kernels ---------------------------------------------------------------


@numba.njit(cache=True)
def _quat_rotmat(qw, qx, qy, qz, out):
    n = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    w = qw / n
    x = qx / n
    y = qy / n
    z = qz / n
    out[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[0, 1] = 2.0 * (x * y - w * z)
    out[0, 2] = 2.0 * (x * z + w * y)
    out[1, 0] = 2.0 * (x * y + w * z)
    out[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[1, 2] = 2.0 * (y * z - w * x)
    out[2, 0] = 2.0 * (x * z - w * y)
    out[2, 1] = 2.0 * (y * z + w * x)
    out[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return n


@numba.njit(cache=True)
def _project_one(i, means, log_scales, rotations, W, t, fx, fy, cx, cy, dilation, Rq, M, Sig3, T, pc):
    """Fills Rq, M, Sig3, T, pc for Gaussian ``i``; returns (z, a, b, c, u, v)."""
    _quat_rotmat(rotations[i, 0], rotations[i, 1], rotations[i, 2], rotations[i, 3], Rq)
    for r in range(3):
        for k in range(3):
            M[r, k] = Rq[r, k] * math.exp(log_scales[i, k])
    for r in range(3):
        for c in range(3):
            acc = 0.0
            for k in range(3):
                acc += M[r, k] * M[c, k]
            Sig3[r, c] = acc
    for r in range(3):
        acc = t[r]
        for k in range(3):
            acc += W[r, k] * means[i, k]
        pc[r] = acc
    x = pc[0]
    y = pc[1]
    z = pc[2]
    j00 = fx / z
    j02 = -fx * x / (z * z)
    j11 = fy / z
    j12 = -fy * y / (z * z)
    for k in range(3):
        T[0, k] = j00 * W[0, k] + j02 * W[2, k]
        T[1, k] = j11 * W[1, k] + j12 * W[2, k]
    a = 0.0
    b = 0.0
    c = 0.0
    for p in range(3):
        for q in range(3):
            s = Sig3[p, q]
            a += T[0, p] * s * T[0, q]
            b += T[0, p] * s * T[1, q]
            c += T[1, p] * s * T[1, q]
    u = fx * x / z + cx
    v = fy * y / z + cy
    return z, a + dilation, b, c + dilation, u, v


@numba.njit(cache=True)
def _preprocess(
    means, log_scales, rotations, opacity_logits, sh, degree,
    W, t, campos, fx, fy, cx, cy, width, height, near, tile, radius_sigma, dilation,
    mean2d, conic, depth, radii, rgb, clamped, opac, rect, visible,
):
    n = means.shape[0]
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    Rq = np.empty((3, 3))
    M = np.empty((3, 3))
    Sig3 = np.empty((3, 3))
    T = np.empty((2, 3))
    pc = np.empty(3)
    basis = np.empty(sh.shape[1])
    for i in range(n):
        visible[i] = False
        radii[i] = 0
        opac[i] = 1.0 / (1.0 + math.exp(-opacity_logits[i]))
        z, a, b, c, u, v = _project_one(
            i, means, log_scales, rotations, W, t, fx, fy, cx, cy, dilation, Rq, M, Sig3, T, pc
        )
        depth[i] = z
        if z <= near:
            continue
        det = a * c - b * b
        if det <= 0.0:
            continue
        conic[i, 0] = c / det
        conic[i, 1] = -b / det
        conic[i, 2] = a / det
        mid = 0.5 * (a + c)
        lam = mid + math.sqrt(max(0.0, mid * mid - det))
        r = int(math.ceil(radius_sigma * math.sqrt(lam)))
        mean2d[i, 0] = u
        mean2d[i, 1] = v
        x0 = max(0, int(math.floor((u - r) / tile)))
        x1 = min(ntx - 1, int(math.floor((u + r) / tile)))
        y0 = max(0, int(math.floor((v - r) / tile)))
        y1 = min(nty - 1, int(math.floor((v + r) / tile)))
        if x0 > x1 or y0 > y1:
            continue
        rect[i, 0] = x0
        rect[i, 1] = x1
        rect[i, 2] = y0
        rect[i, 3] = y1
        radii[i] = r
        visible[i] = True
        dx = means[i, 0] - campos[0]
        dy = means[i, 1] - campos[1]
        dz = means[i, 2] - campos[2]
        dn = math.sqrt(dx * dx + dy * dy + dz * dz)
        sh_basis(dx / dn, dy / dn, dz / dn, degree, basis)
        for ch in range(3):
            acc = 0.5
            for k in range(sh.shape[1]):
                acc += basis[k] * sh[i, k, ch]
            clamped[i, ch] = acc < 0.0
            rgb[i, ch] = max(acc, 0.0)


@numba.njit(cache=True)
def _bin_tiles(order, rect, ntx, nty):
    n_tiles = ntx * nty
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for g in order:
        for ty in range(rect[g, 2], rect[g, 3] + 1):
            for tx in range(rect[g, 0], rect[g, 1] + 1):
                counts[ty * ntx + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    out = np.empty(offsets[-1], dtype=np.int64)
    for g in order:
        for ty in range(rect[g, 2], rect[g, 3] + 1):
            for tx in range(rect[g, 0], rect[g, 1] + 1):
                tid = ty * ntx + tx
                out[fill[tid]] = g
                fill[tid] += 1
    return offsets, out


@numba.njit(cache=True, parallel=True)
def _raster_forward(
    offsets, tile_list, mean2d, conic, opac, rgb, bg, width, height, tile,
    alpha_min, alpha_max, t_eps, image, t_final, pixel_end,
):
    ntx = (width + tile - 1) // tile
    n_tiles = offsets.shape[0] - 1
    for tid in prange(n_tiles):
        tx = tid % ntx
        ty = tid // ntx
        start = offsets[tid]
        end = offsets[tid + 1]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                last = start
                for k in range(start, end):
                    g = tile_list[k]
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) - conic[g, 1] * dx * dy
                    if power > 0.0:
                        continue
                    alpha = min(alpha_max, opac[g] * math.exp(power))
                    if alpha < alpha_min:
                        continue
                    test_t = T * (1.0 - alpha)
                    if test_t < t_eps:
                        break
                    w = alpha * T
                    c0 += rgb[g, 0] * w
                    c1 += rgb[g, 1] * w
                    c2 += rgb[g, 2] * w
                    T = test_t
                    last = k + 1
                image[py, px, 0] = c0 + T * bg[0]
                image[py, px, 1] = c1 + T * bg[1]
                image[py, px, 2] = c2 + T * bg[2]
                t_final[py, px] = T
                pixel_end[py, px] = last


@numba.njit(cache=True, parallel=True)
def _raster_backward(
    offsets, tile_list, mean2d, conic, opac, rgb, bg, width, height, tile,
    alpha_min, alpha_max, t_final, pixel_end, dl_dimg, entry_grad,
):
    """entry_grad columns: du, dv, dA, dB, dC, dopacity, dr, dg, db, |du|, |dv|."""
    ntx = (width + tile - 1) // tile
    n_tiles = offsets.shape[0] - 1
    for tid in prange(n_tiles):
        tx = tid % ntx
        ty = tid // ntx
        start = offsets[tid]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = t_final[py, px]
                g0 = dl_dimg[py, px, 0]
                g1 = dl_dimg[py, px, 1]
                g2 = dl_dimg[py, px, 2]
                s0 = T * bg[0]
                s1 = T * bg[1]
                s2 = T * bg[2]
                for k in range(pixel_end[py, px] - 1, start - 1, -1):
                    g = tile_list[k]
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    A = conic[g, 0]
                    B = conic[g, 1]
                    C = conic[g, 2]
                    power = -0.5 * (A * dx * dx + C * dy * dy) - B * dx * dy
                    if power > 0.0:
                        continue
                    G = math.exp(power)
                    raw = opac[g] * G
                    alpha = min(alpha_max, raw)
                    if alpha < alpha_min:
                        continue
                    one_m = 1.0 - alpha
                    T = T / one_m
                    w = alpha * T
                    entry_grad[k, 6] += w * g0
                    entry_grad[k, 7] += w * g1
                    entry_grad[k, 8] += w * g2
                    r0 = rgb[g, 0]
                    r1 = rgb[g, 1]
                    r2 = rgb[g, 2]
                    dl_dalpha = (
                        g0 * (r0 * T - s0 / one_m)
                        + g1 * (r1 * T - s1 / one_m)
                        + g2 * (r2 * T - s2 / one_m)
                    )
                    s0 += r0 * w
                    s1 += r1 * w
                    s2 += r2 * w
                    if raw > alpha_max:
                        continue
                    entry_grad[k, 5] += dl_dalpha * G
                    dl_dpower = dl_dalpha * opac[g] * G
                    gu = dl_dpower * (A * dx + B * dy)
                    gv = dl_dpower * (B * dx + C * dy)
                    entry_grad[k, 0] += gu
                    entry_grad[k, 1] += gv
                    entry_grad[k, 9] += abs(gu)
                    entry_grad[k, 10] += abs(gv)
                    entry_grad[k, 2] += -0.5 * dx * dx * dl_dpower
                    entry_grad[k, 3] += -dx * dy * dl_dpower
                    entry_grad[k, 4] += -0.5 * dy * dy * dl_dpower


@numba.njit(cache=True)
def _reduce_entries(tile_list, entry_grad, out):
    for k in range(tile_list.shape[0]):
        g = tile_list[k]
        for c in range(entry_grad.shape[1]):
            out[g, c] += entry_grad[k, c]


@numba.njit(cache=True)
def _dquat(G_R, w, x, y, z):
    """Gradient w.r.t. a unit quaternion given dL/dR."""
    gw = (
        G_R[0, 1] * (-2 * z) + G_R[0, 2] * (2 * y) + G_R[1, 0] * (2 * z)
        + G_R[1, 2] * (-2 * x) + G_R[2, 0] * (-2 * y) + G_R[2, 1] * (2 * x)
    )
    gx = (
        G_R[0, 1] * (2 * y) + G_R[0, 2] * (2 * z) + G_R[1, 0] * (2 * y) + G_R[1, 1] * (-4 * x)
        + G_R[1, 2] * (-2 * w) + G_R[2, 0] * (2 * z) + G_R[2, 1] * (2 * w) + G_R[2, 2] * (-4 * x)
    )
    gy = (
        G_R[0, 0] * (-4 * y) + G_R[0, 1] * (2 * x) + G_R[0, 2] * (2 * w) + G_R[1, 0] * (2 * x)
        + G_R[1, 2] * (2 * z) + G_R[2, 0] * (-2 * w) + G_R[2, 1] * (2 * z) + G_R[2, 2] * (-4 * y)
    )
    gz = (
        G_R[0, 0] * (-4 * z) + G_R[0, 1] * (-2 * w) + G_R[0, 2] * (2 * x) + G_R[1, 0] * (2 * w)
        + G_R[1, 1] * (-4 * z) + G_R[1, 2] * (2 * y) + G_R[2, 0] * (2 * x) + G_R[2, 1] * (2 * y)
    )
    return gw, gx, gy, gz


@numba.njit(cache=True, parallel=True)
def _preprocess_backward(
    means, log_scales, rotations, sh, degree, W, t, campos, fx, fy, cx, cy, dilation,
    visible, conic, opac, clamped, gsum,
    g_means, g_log_scales, g_rotations, g_logits, g_sh,
):
    n = means.shape[0]
    K = sh.shape[1]
    for i in prange(n):
        if not visible[i]:
            continue
        Rq = np.empty((3, 3))
        M = np.empty((3, 3))
        Sig3 = np.empty((3, 3))
        T = np.empty((2, 3))
        pc = np.empty(3)
        basis = np.empty(K)
        dbasis = np.empty((K, 3))
        z, a, b, c, u, v = _project_one(
            i, means, log_scales, rotations, W, t, fx, fy, cx, cy, dilation, Rq, M, Sig3, T, pc
        )
        gu = gsum[i, 0]
        gv = gsum[i, 1]
        gA = gsum[i, 2]
        gB = gsum[i, 3]
        gC = gsum[i, 4]
        o = opac[i]
        g_logits[i] = gsum[i, 5] * o * (1.0 - o)

        # colour
        dx = means[i, 0] - campos[0]
        dy = means[i, 1] - campos[1]
        dz = means[i, 2] - campos[2]
        dn = math.sqrt(dx * dx + dy * dy + dz * dz)
        ux = dx / dn
        uy = dy / dn
        uz = dz / dn
        sh_basis(ux, uy, uz, degree, basis)
        sh_basis_grad(ux, uy, uz, degree, dbasis)
        gdir0 = 0.0
        gdir1 = 0.0
        gdir2 = 0.0
        for ch in range(3):
            graw = 0.0 if clamped[i, ch] else gsum[i, 6 + ch]
            for k in range(K):
                g_sh[i, k, ch] = basis[k] * graw
                coef = sh[i, k, ch] * graw
                gdir0 += coef * dbasis[k, 0]
                gdir1 += coef * dbasis[k, 1]
                gdir2 += coef * dbasis[k, 2]
        proj = ux * gdir0 + uy * gdir1 + uz * gdir2
        gm0 = (gdir0 - ux * proj) / dn
        gm1 = (gdir1 - uy * proj) / dn
        gm2 = (gdir2 - uz * proj) / dn

        # conic -> 2D covariance
        A = conic[i, 0]
        B = conic[i, 1]
        C = conic[i, 2]
        q00 = gA
        q01 = 0.5 * gB
        q11 = gC
        # P = Q @ GQ
        p00 = A * q00 + B * q01
        p01 = A * q01 + B * q11
        p10 = B * q00 + C * q01
        p11 = B * q01 + C * q11
        # G2 = -P @ Q
        s00 = -(p00 * A + p01 * B)
        s01 = -(p00 * B + p01 * C)
        s11 = -(p10 * B + p11 * C)

        # 2D covariance -> Sigma3 and T
        G2 = np.empty((2, 2))
        G2[0, 0] = s00
        G2[0, 1] = s01
        G2[1, 0] = s01
        G2[1, 1] = s11
        GS3 = np.zeros((3, 3))
        for p in range(3):
            for q in range(3):
                acc = 0.0
                for r in range(2):
                    for s in range(2):
                        acc += T[r, p] * G2[r, s] * T[s, q]
                GS3[p, q] = acc
        TS = np.zeros((2, 3))
        for r in range(2):
            for q in range(3):
                acc = 0.0
                for p in range(3):
                    acc += T[r, p] * Sig3[p, q]
                TS[r, q] = acc
        GT = np.zeros((2, 3))
        for r in range(2):
            for q in range(3):
                GT[r, q] = 2.0 * (G2[r, 0] * TS[0, q] + G2[r, 1] * TS[1, q])
        GJ = np.zeros((2, 3))
        for r in range(2):
            for k in range(3):
                acc = 0.0
                for q in range(3):
                    acc += GT[r, q] * W[k, q]
                GJ[r, k] = acc
        x = pc[0]
        y = pc[1]
        z2 = z * z
        z3 = z2 * z
        gx = GJ[0, 2] * (-fx / z2) + gu * fx / z
        gy = GJ[1, 2] * (-fy / z2) + gv * fy / z
        gz = (
            GJ[0, 0] * (-fx / z2) + GJ[0, 2] * (2.0 * fx * x / z3)
            + GJ[1, 1] * (-fy / z2) + GJ[1, 2] * (2.0 * fy * y / z3)
            - gu * fx * x / z2 - gv * fy * y / z2
        )
        for k in range(3):
            g_means[i, k] = W[0, k] * gx + W[1, k] * gy + W[2, k] * gz
        g_means[i, 0] += gm0
        g_means[i, 1] += gm1
        g_means[i, 2] += gm2

        # Sigma3 = M M^T -> scales and rotation
        GR = np.empty((3, 3))
        for r in range(3):
            for k in range(3):
                gmk = 0.0
                for q in range(3):
                    gmk += 2.0 * GS3[r, q] * M[q, k]
                s_k = math.exp(log_scales[i, k])
                GR[r, k] = gmk * s_k
        for k in range(3):
            s_k = math.exp(log_scales[i, k])
            acc = 0.0
            for r in range(3):
                acc += GR[r, k] / s_k * Rq[r, k]
            g_log_scales[i, k] = acc * s_k
        qn = math.sqrt(
            rotations[i, 0] ** 2 + rotations[i, 1] ** 2 + rotations[i, 2] ** 2 + rotations[i, 3] ** 2
        )
        w = rotations[i, 0] / qn
        qx = rotations[i, 1] / qn
        qy = rotations[i, 2] / qn
        qz = rotations[i, 3] / qn
        gw, gqx, gqy, gqz = _dquat(GR, w, qx, qy, qz)
        dot = w * gw + qx * gqx + qy * gqy + qz * gqz
        g_rotations[i, 0] = (gw - w * dot) / qn
        g_rotations[i, 1] = (gqx - qx * dot) / qn
        g_rotations[i, 2] = (gqy - qy * dot) / qn
        g_rotations[i, 3] = (gqz - qz * dot) / qn


@numba.njit(cache=True)
def _weighted_pixel_sum(
    offsets, tile_list, pixel_end, mean2d, conic, opac, width, height, tile,
    alpha_min, alpha_max, pixel_map, out,
):
    """Per Gaussian: sum over pixels of its compositing weight times ``pixel_map``."""
    ntx = (width + tile - 1) // tile
    n_tiles = offsets.shape[0] - 1
    for tid in range(n_tiles):
        tx = tid % ntx
        ty = tid // ntx
        start = offsets[tid]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = 1.0
                val = pixel_map[py, px]
                for k in range(start, pixel_end[py, px]):
                    g = tile_list[k]
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) - conic[g, 1] * dx * dy
                    if power > 0.0:
                        continue
                    alpha = min(alpha_max, opac[g] * math.exp(power))
                    if alpha < alpha_min:
                        continue
                    out[g] += alpha * T * val
                    T = T * (1.0 - alpha)


# --- public API --------------------------------------------------------------


def _as_bg(background, dtype):
    if background is None:
        return np.zeros(3, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64).reshape(-1)
    if bg.size == 1:
        bg = np.repeat(bg, 3)
    return bg


def project_gaussians(cloud: GaussianCloud, camera: Camera, config: RasterConfig = DEFAULT_RASTER) -> dict:
    """Screen mean, dilated screen covariance and depth for every Gaussian.

    Culled Gaussians (depth at or below the near plane, or degenerate) are
    flagged with ``culled``.
    """
    n = len(cloud)
    out = {
        "mean2d": np.zeros((n, 2)),
        "cov2d": np.zeros((n, 2, 2)),
        "depth": np.zeros(n),
        "culled": np.ones(n, dtype=bool),
    }
    Rq = np.empty((3, 3))
    M = np.empty((3, 3))
    Sig3 = np.empty((3, 3))
    T = np.empty((2, 3))
    pc = np.empty(3)
    means = np.ascontiguousarray(cloud.means, dtype=np.float64)
    log_scales = np.ascontiguousarray(cloud.log_scales, dtype=np.float64)
    rotations = np.ascontiguousarray(cloud.rotations, dtype=np.float64)
    for i in range(n):
        z, a, b, c, u, v = _project_one(
            i, means, log_scales, rotations, camera.rotation, camera.translation,
            float(camera.fx), float(camera.fy), float(camera.cx), float(camera.cy),
            config.dilation, Rq, M, Sig3, T, pc,
        )
        out["depth"][i] = z
        if z <= config.near:
            continue
        out["mean2d"][i] = (u, v)
        out["cov2d"][i] = [[a, b], [b, c]]
        out["culled"][i] = a * c - b * b <= 0
    return out


def render(
    cloud: GaussianCloud,
    camera: Camera,
    background=None,
    config: RasterConfig = DEFAULT_RASTER,
) -> RenderOutput:
    """Alpha-composite ``cloud`` as seen from ``camera``."""
    width, height = int(camera.width), int(camera.height)
    if width > config.max_image_size or height > config.max_image_size:
        raise InvalidInputError(f"image {width}x{height} exceeds max size {config.max_image_size}")
    bad = cloud.find_nonfinite()
    if bad is not None:
        raise FloatingPointError(f"Gaussian {bad} has a non-finite parameter")
    dtype = np.float64
    n = len(cloud)
    tile = config.tile_size
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    bg = _as_bg(background, dtype)

    mean2d = np.zeros((n, 2))
    conic = np.zeros((n, 3))
    depth = np.zeros(n)
    radii = np.zeros(n, dtype=np.int32)
    rgb = np.zeros((n, 3))
    clamped = np.zeros((n, 3), dtype=np.bool_)
    opac = np.zeros(n)
    rect = np.zeros((n, 4), dtype=np.int64)
    visible = np.zeros(n, dtype=np.bool_)
    if n:
        _preprocess(
            np.ascontiguousarray(cloud.means), np.ascontiguousarray(cloud.log_scales),
            np.ascontiguousarray(cloud.rotations), np.ascontiguousarray(cloud.opacity_logits),
            np.ascontiguousarray(cloud.sh_coeffs), cloud.sh_degree,
            camera.rotation, camera.translation, camera.center,
            float(camera.fx), float(camera.fy), float(camera.cx), float(camera.cy),
            width, height, config.near, tile, config.radius_sigma, config.dilation,
            mean2d, conic, depth, radii, rgb, clamped, opac, rect, visible,
        )
    vis_idx = np.flatnonzero(visible)
    # stable sort over ascending indices: equal depths keep index order
    order = vis_idx[np.argsort(depth[vis_idx], kind="stable")]
    offsets, tile_list = _bin_tiles(order.astype(np.int64), rect, ntx, nty)

    image = np.empty((height, width, 3))
    t_final = np.empty((height, width))
    pixel_end = np.empty((height, width), dtype=np.int64)
    _raster_forward(
        offsets, tile_list, mean2d, conic, opac, rgb, bg, width, height, tile,
        config.alpha_min, config.alpha_max, config.transmittance_eps, image, t_final, pixel_end,
    )
    return RenderOutput(
        image=image,
        final_transmittance=t_final,
        touched=visible,
        radii=radii,
        background=bg,
        mean2d=mean2d,
        conic=conic,
        opacity=opac,
        rgb=rgb,
        color_clamped=clamped,
        tile_offsets=offsets,
        tile_list=tile_list,
        pixel_end=pixel_end,
        config=config,
        camera_id=camera.id,
        num_gaussians=n,
        sh_degree=cloud.sh_degree,
    )


def _check_output(cloud, camera, output):
    if (
        output.num_gaussians != len(cloud)
        or output.camera_id != camera.id
        or output.image.shape[:2] != (camera.height, camera.width)
        or output.sh_degree != cloud.sh_degree
    ):
        raise InvalidInputError("render output does not belong to this cloud/camera")


def screen_gradient_sums(cloud, camera, output: RenderOutput, dl_dimage) -> np.ndarray:
    """Per-Gaussian sums of the per-pixel backward terms (see ``_raster_backward``)."""
    _check_output(cloud, camera, output)
    dl_dimage = np.ascontiguousarray(dl_dimage, dtype=np.float64)
    if dl_dimage.shape != output.image.shape:
        raise InvalidInputError(f"loss gradient shape {dl_dimage.shape} != image {output.image.shape}")
    cfg = output.config
    entry = np.zeros((len(output.tile_list), 11))
    _raster_backward(
        output.tile_offsets, output.tile_list, output.mean2d, output.conic, output.opacity,
        output.rgb, output.background, camera.width, camera.height, cfg.tile_size,
        cfg.alpha_min, cfg.alpha_max, output.final_transmittance, output.pixel_end,
        dl_dimage, entry,
    )
    gsum = np.zeros((len(cloud), 11))
    _reduce_entries(output.tile_list, entry, gsum)
    return gsum


def render_backward(cloud: GaussianCloud, camera: Camera, output: RenderOutput, dl_dimage):
    """Gradients of a scalar loss w.r.t. every parameter, plus view-space gradients.

    Returns ``(grads, viewspace)`` where ``grads`` maps parameter names to
    arrays shaped like the cloud's.
    """
    gsum = screen_gradient_sums(cloud, camera, output, dl_dimage)
    n = len(cloud)
    grads = {
        "means": np.zeros((n, 3)),
        "log_scales": np.zeros((n, 3)),
        "rotations": np.zeros((n, 4)),
        "opacity_logits": np.zeros(n),
        "sh_coeffs": np.zeros(cloud.sh_coeffs.shape),
    }
    if n:
        _preprocess_backward(
            np.ascontiguousarray(cloud.means), np.ascontiguousarray(cloud.log_scales),
            np.ascontiguousarray(cloud.rotations), np.ascontiguousarray(cloud.sh_coeffs),
            cloud.sh_degree, camera.rotation, camera.translation, camera.center,
            float(camera.fx), float(camera.fy), float(camera.cx), float(camera.cy),
            output.config.dilation, output.touched, output.conic, output.opacity,
            output.color_clamped, gsum,
            grads["means"], grads["log_scales"], grads["rotations"], grads["opacity_logits"],
            grads["sh_coeffs"],
        )
    ndc = np.array([camera.width / 2.0, camera.height / 2.0])
    viewspace = ViewspaceGrads(
        summed=gsum[:, 0:2] * ndc,
        absolute=gsum[:, 9:11] * ndc,
        visible=output.touched.copy(),
    )
    if cloud.dtype != np.float64:
        grads = {k: v.astype(cloud.dtype) for k, v in grads.items()}
    return grads, viewspace


def compositing_weight_sums(cloud: GaussianCloud, camera: Camera, output: RenderOutput, pixel_map) -> np.ndarray:
    """For each Gaussian, ``sum_pixels alpha' * T * pixel_map``."""
    _check_output(cloud, camera, output)
    pixel_map = np.ascontiguousarray(pixel_map, dtype=np.float64)
    cfg = output.config
    out = np.zeros(len(cloud))
    _weighted_pixel_sum(
        output.tile_offsets, output.tile_list, output.pixel_end, output.mean2d, output.conic,
        output.opacity, camera.width, camera.height, cfg.tile_size, cfg.alpha_min, cfg.alpha_max,
        pixel_map, out,
    )
    return out


def compositing_weights(cloud: GaussianCloud, camera: Camera, output: RenderOutput) -> np.ndarray:
    """Dense ``(N, H, W)`` array of per-pixel compositing weights; debugging and tests only."""
    _check_output(cloud, camera, output)
    n = len(cloud)
    out = np.zeros((n, camera.height, camera.width))
    for py in range(camera.height):
        for px in range(camera.width):
            m = np.zeros((camera.height, camera.width))
            m[py, px] = 1.0
            out[:, py, px] = compositing_weight_sums(cloud, camera, output, m)
    return out


def set_threads(threads: Optional[int]) -> None:
    if threads:
        numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
