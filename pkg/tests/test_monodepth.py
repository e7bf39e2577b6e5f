import math
import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splatbench.core import Camera, InvalidInputError, PointCloud, SceneDescriptor
from splatbench.monodepth import (
    AlignmentError,
    DepthPairs,
    MonodepthConfig,
    adaptive_subsample_mask,
    depth_gradient_mask,
    floater_votes,
    load_depths,
    mask_from_factors,
    monodepth_pipeline,
    piecewise_refine,
    ransac_scale_shift,
    read_pfm,
    remove_floaters,
    select_cameras,
    sfm_depth_correspondences,
    unproject,
    write_pfm,
)


def axis_camera(center=(0.0, 0.0, 0.0), size=16, focal=20.0, cid="0"):
    """Identity-rotation camera at ``center`` looking down +z."""
    c = np.asarray(center, dtype=np.float64)
    return Camera(focal, focal, (size - 1) / 2, (size - 1) / 2, size, size, np.eye(3), -c, id=cid)


def affine_pairs(n, scale, shift, outlier_frac, seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(1.0, 10.0, n)
    t = scale * d + shift
    bad = rng.permutation(n)[: int(outlier_frac * n)]
    t[bad] *= rng.choice([0.5, 1.7], size=len(bad)) + rng.uniform(0, 0.2, len(bad))
    clean = np.ones(n, dtype=bool)
    clean[bad] = False
    return DepthPairs(np.zeros((n, 2), dtype=np.int64), t, d), clean


# --- RANSAC ----------------------------------------------------------------


def test_noiseless_affine_recovered():
    pairs, _ = affine_pairs(200, 3.0, 1.0, 0.0, 0)
    res = ransac_scale_shift(pairs, seed=1)
    assert res.scale == pytest.approx(3.0, abs=1e-9) and res.shift == pytest.approx(1.0, abs=1e-9)
    assert res.inliers.all()


@pytest.mark.parametrize("seed", range(5))
def test_outliers_rejected_exactly(seed):
    pairs, clean = affine_pairs(300, 2.5, -0.7, 0.2, seed)
    res = ransac_scale_shift(pairs, 4, 0.999, 0.01, 2500, seed=seed)
    np.testing.assert_array_equal(res.inliers, clean)
    assert res.scale == pytest.approx(2.5, abs=1e-6) and res.shift == pytest.approx(-0.7, abs=1e-6)
    assert res.scale > 0 and res.inlier_count >= 4 and res.iterations <= 2500


def test_order_invariance():
    pairs, _ = affine_pairs(150, 1.3, 0.4, 0.2, 9)
    perm = np.random.default_rng(0).permutation(len(pairs))
    shuffled = DepthPairs(pairs.pixels[perm], pairs.sfm_depth[perm], pairs.pred_depth[perm])
    a = ransac_scale_shift(pairs, seed=3)
    b = ransac_scale_shift(shuffled, seed=3)
    assert (a.scale, a.shift) == (b.scale, b.shift)
    np.testing.assert_array_equal(a.inliers[perm], b.inliers)


def test_degenerate_and_short_inputs():
    same = DepthPairs(np.zeros((10, 2), dtype=np.int64), np.arange(10.0) + 1, np.full(10, 2.0))
    with pytest.raises(AlignmentError):
        ransac_scale_shift(same)
    few = DepthPairs(np.zeros((3, 2), dtype=np.int64), np.ones(3), np.arange(3.0))
    with pytest.raises(AlignmentError):
        ransac_scale_shift(few)


# --- correspondences ----------------------------------------------------------


def test_axis_point_and_behind_camera():
    cam = axis_camera(size=17)
    depth = np.full((17, 17), 7.0)
    pts = PointCloud([[0.0, 0.0, 2.0], [0.0, 0.0, -2.0]], np.zeros((2, 3)))
    pairs = sfm_depth_correspondences(cam, pts, depth)
    assert len(pairs) == 1
    assert pairs.sfm_depth[0] == 2.0 and pairs.pred_depth[0] == 7.0
    np.testing.assert_array_equal(pairs.pixels[0], [8, 8])


@given(st.integers(0, 2**32 - 1))
def test_pair_count_matches_projection_loop(seed):
    rng = np.random.default_rng(seed)
    cam = axis_camera(size=12, focal=10.0)
    pts = PointCloud(rng.uniform(-3, 3, size=(60, 3)), np.zeros((60, 3)))
    depth = rng.uniform(0.5, 5, size=(12, 12))
    depth[rng.uniform(size=depth.shape) < 0.1] = np.nan
    expected = 0
    for x, y, z in pts.positions:
        if z <= 0:
            continue
        u, v = round(10 * x / z + 5.5), round(10 * y / z + 5.5)
        if 0 <= u < 12 and 0 <= v < 12 and np.isfinite(depth[v, u]) and depth[v, u] > 0:
            expected += 1
    assert len(sfm_depth_correspondences(cam, pts, depth)) == expected


# --- refinement ----------------------------------------------------------------


def test_piecewise_anchor_example():
    assert piecewise_refine(np.array([2.5]), [1, 2, 3], [10, 20, 30])[0] == 25.0
    np.testing.assert_array_equal(piecewise_refine(np.array([1.0, 2.0, 3.0]), [1, 2, 3], [10, 21, 30]), [10, 21, 30])


def brute_refine(x, dk, sk):
    pairs = sorted(zip(dk, sk))
    if x <= pairs[0][0]:
        (a, fa), (b, fb) = pairs[0], pairs[1]
    elif x >= pairs[-1][0]:
        (a, fa), (b, fb) = pairs[-2], pairs[-1]
    else:
        for (a, fa), (b, fb) in zip(pairs, pairs[1:]):
            if a <= x <= b:
                break
    return fa + (x - a) / (b - a) * (fb - fa)


@given(st.integers(0, 2**32 - 1))
def test_piecewise_matches_bracketing_search(seed):
    rng = np.random.default_rng(seed)
    dk = np.sort(rng.choice(np.arange(1, 200), size=rng.integers(2, 12), replace=False) / 10.0)
    sk = np.cumsum(rng.uniform(0.1, 3.0, size=len(dk)))
    q = rng.uniform(0, 21, size=30)
    got = piecewise_refine(q, dk, sk)
    np.testing.assert_allclose(got, [brute_refine(x, dk, sk) for x in q], rtol=1e-12, atol=1e-12)
    assert np.all(np.diff(got[np.argsort(q)]) >= -1e-12)


def test_piecewise_exact_for_affine_and_averages_duplicates():
    rng = np.random.default_rng(4)
    d = rng.uniform(1, 9, size=40)
    q = rng.uniform(0, 12, size=100)
    np.testing.assert_allclose(piecewise_refine(q, d, 1.7 * d + 0.3), 1.7 * q + 0.3, atol=1e-9)
    assert piecewise_refine(np.array([1.0]), [1, 1, 2], [10, 12, 20])[0] == 11.0
    with pytest.raises(AlignmentError):
        piecewise_refine(np.array([1.0]), [2, 2], [3, 4])


# --- masks -----------------------------------------------------------------


def test_mask_equation_instances():
    i, j = np.indices((9, 11))
    np.testing.assert_array_equal(mask_from_factors(np.full((9, 11), 2.0)), (i % 2 == 0) & (j % 2 == 0))
    assert mask_from_factors(np.full((9, 11), 1.0)).all()


def brute_mask(depth, d_min, d_max):
    flat = [float(v) for v in depth.ravel()]
    q1, _, q3 = statistics.quantiles(flat, n=4, method="inclusive")
    lo_c, hi_c = q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)
    clamped = [min(max(v, lo_c), hi_c) for v in flat]
    lo, hi = min(clamped), max(clamped)
    h, w = depth.shape
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            c = clamped[i * w + j]
            s = d_min + (0.0 if hi == lo else (c - lo) / (hi - lo)) * (d_max - d_min)
            f = math.floor(s)
            out[i, j] = i % f == 0 and j % f == 0
    return out


def test_mask_matches_brute_force_on_fifty_fields():
    rng = np.random.default_rng(7)
    for _ in range(50):
        h, w = rng.integers(10, 40, size=2)
        depth = rng.lognormal(1.0, 0.6, size=(h, w))
        np.testing.assert_array_equal(adaptive_subsample_mask(depth, 5, 15), brute_mask(depth, 5, 15))


def test_constant_depth_uses_minimum_factor():
    i, j = np.indices((20, 20))
    np.testing.assert_array_equal(adaptive_subsample_mask(np.full((20, 20), 3.0)), (i % 5 == 0) & (j % 5 == 0))
    with pytest.raises(InvalidInputError):
        adaptive_subsample_mask(np.ones((4, 4)), 0.5, 3)


def test_gradient_mask():
    assert depth_gradient_mask(np.full((8, 8), 2.0)).all()
    step = np.full((8, 8), 2.0)
    step[:, 4:] = 4.0
    m = depth_gradient_mask(step, 0.05)
    assert not m[:, 3:5].any() and m[:, :3].all() and m[:, 5:].all()
    ramp = 10.0 + 0.2 * np.arange(8)[None, :] * np.ones((8, 1))  # relative slope <= 0.02
    assert depth_gradient_mask(ramp, 0.05).all()


# --- unprojection --------------------------------------------------------------


def test_unproject_principal_point():
    cam = axis_camera(size=17)
    mask = np.zeros((17, 17), dtype=bool)
    mask[8, 8] = True
    pc = unproject(cam, np.full((17, 17), 2.0), mask)
    np.testing.assert_allclose(pc.positions, [[0, 0, 2]])
    assert len(unproject(cam, np.ones((17, 17)), np.zeros((17, 17), bool))) == 0


def test_unproject_round_trip():
    rng = np.random.default_rng(2)
    cam = Camera.look_at((1.0, -2.0, 0.5), (0, 0, 3), fx=30, width=24, height=20)
    depth = rng.uniform(1, 6, size=(20, 24))
    mask = rng.uniform(size=depth.shape) < 0.3
    image = rng.uniform(size=(20, 24, 3))
    pc = unproject(cam, depth, mask, image)
    uv, z = cam.project(pc.positions)
    rows, cols = np.nonzero(mask)
    np.testing.assert_allclose(uv, np.stack([cols, rows], axis=1), atol=1e-6)
    np.testing.assert_allclose(z, depth[mask], rtol=1e-12)
    np.testing.assert_array_equal(pc.colors, image[mask])


# --- floaters ----------------------------------------------------------------


def test_floater_fixture():
    cams = [axis_camera((x, 0.0, 0.0), size=33, cid=str(k)) for k, x in enumerate([-0.2, -0.1, 0.1, 0.2])]
    depths = {c.id: np.full((33, 33), 5.0) for c in cams}
    pts = PointCloud([[0.0, 0.0, 5.0], [0.0, 0.0, 2.5], [0.1, 0.1, 5.2], [100.0, 0.0, 5.0]], np.zeros((4, 3)))
    out = remove_floaters(pts, cams, depths, tau=0.1, ratio_thresh=0.6)
    kept = {tuple(p) for p in out.positions}
    assert (0.0, 0.0, 2.5) not in kept
    assert {(0.0, 0.0, 5.0), (0.1, 0.1, 5.2), (100.0, 0.0, 5.0)} <= kept


def test_one_floater_vote_of_four_retained():
    cams = [axis_camera(size=9, cid=str(k)) for k in range(4)]
    depths = {c.id: np.full((9, 9), 4.0) for c in cams}
    depths["2"] = np.full((9, 9), 10.0)
    pts = PointCloud([[0.0, 0.0, 4.0]], np.zeros((1, 3)))
    floater, solid = floater_votes(pts, cams, depths, 0.1)
    assert (floater[0], solid[0]) == (1, 3)
    assert len(remove_floaters(pts, cams, depths, 0.1, 0.5)) == 1


@given(st.integers(0, 2**32 - 1))
def test_zero_floater_votes_never_removed(seed):
    rng = np.random.default_rng(seed)
    cams = [axis_camera((x, 0, 0), size=10, cid=str(k)) for k, x in enumerate(rng.uniform(-1, 1, 3))]
    depths = {c.id: rng.uniform(1, 5, size=(10, 10)) for c in cams}
    pts = PointCloud(rng.uniform(-2, 2, size=(40, 3)) + [0, 0, 3], np.zeros((40, 3)))
    floater, _ = floater_votes(pts, cams, depths, 0.1)
    kept = {tuple(p) for p in remove_floaters(pts, cams, depths, 0.1, 0.6).positions}
    assert {tuple(p) for p in pts.positions[floater == 0]} <= kept


# --- camera selection ------------------------------------------------------------


def test_camera_selection():
    cams = [axis_camera((x, 0, 0), cid=str(k)) for k, x in enumerate(np.linspace(0, 1, 10))]
    assert select_cameras(cams, 300) == cams
    rng = np.random.default_rng(0)
    left = [axis_camera((-5 + rng.normal(scale=0.01), 0, 0), cid=f"l{k}") for k in range(6)]
    right = [axis_camera((5 + rng.normal(scale=0.01), 0, 0), cid=f"r{k}") for k in range(6)]
    picked = select_cameras(left + right, 2, seed=1)
    assert sorted(c.id[0] for c in picked) == ["l", "r"]
    for limit in (1, 3, 7, 12):
        assert len(select_cameras(left + right, limit)) == limit


# --- PFM -------------------------------------------------------------------------


@pytest.mark.parametrize("shape", [(5, 7), (4, 3, 3)])
def test_pfm_round_trip(tmp_path, shape):
    data = np.random.default_rng(0).normal(size=shape).astype(np.float32)
    write_pfm(tmp_path / "d.pfm", data)
    np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), data)


def test_pfm_big_endian_bottom_up(tmp_path):
    rows = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=">f4")  # stored bottom row first
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 2\n1.0\n" + rows.tobytes())
    np.testing.assert_array_equal(read_pfm(tmp_path / "b.pfm"), [[3, 4], [1, 2]])
    (tmp_path / "bad.pfm").write_bytes(b"P6\n2 2\n255\n")
    with pytest.raises(InvalidInputError):
        read_pfm(tmp_path / "bad.pfm")


# --- end-to-end ------------------------------------------------------------------

SQUARE = (-1.0, 0.0, -1.0, 1.0, 4.0)  # x0, x1, y0, y1, z
SPHERE = (np.array([0.9, 0.2, 5.0]), 0.5)
BACK_Z = 6.0
SIZE, FOCAL = 48, 40.0


def raycast(cam):
    """Exact camera-space depth of the square, sphere and back plane."""
    j, i = np.meshgrid(np.arange(SIZE), np.arange(SIZE))
    d = np.stack([(j - cam.cx) / FOCAL, (i - cam.cy) / FOCAL, np.ones_like(j, dtype=float)], axis=-1)
    o = cam.center
    depth = np.full((SIZE, SIZE), (BACK_Z - o[2]))
    x0, x1, y0, y1, z = SQUARE
    lam = z - o[2]
    hit = o + lam * d
    on_sq = (hit[..., 0] >= x0) & (hit[..., 0] <= x1) & (hit[..., 1] >= y0) & (hit[..., 1] <= y1)
    depth = np.where(on_sq, np.minimum(depth, lam), depth)
    c, r = SPHERE
    oc = o - c
    a = (d * d).sum(-1)
    b = 2 * (d @ oc)
    disc = b * b - 4 * a * (oc @ oc - r * r)
    lam_s = (-b - np.sqrt(np.maximum(disc, 0))) / (2 * a)
    return np.where((disc > 0) & (lam_s > 0), np.minimum(depth, lam_s), depth)


def surface_distance(p):
    x0, x1, y0, y1, z = SQUARE
    c, r = SPHERE
    d_back = np.abs(p[:, 2] - BACK_Z)
    inside = (p[:, 0] >= x0 - 1e-9) & (p[:, 0] <= x1 + 1e-9) & (p[:, 1] >= y0 - 1e-9) & (p[:, 1] <= y1 + 1e-9)
    d_sq = np.where(inside, np.abs(p[:, 2] - z), np.inf)
    d_sph = np.abs(np.linalg.norm(p - c, axis=1) - r)
    return np.minimum(np.minimum(d_back, d_sq), d_sph)


@pytest.fixture(scope="module")
def raycast_scene():
    centers = [(x, y, 0.0) for x in (-0.3, 0.0, 0.3) for y in (-0.3, 0.3)]
    cams = [Camera(FOCAL, FOCAL, (SIZE - 1) / 2, (SIZE - 1) / 2, SIZE, SIZE, np.eye(3), -np.array(c), id=str(k))
            for k, c in enumerate(centers)]
    scene = SceneDescriptor(cams, [c.id for c in cams], [])
    true = {c.id: raycast(c) for c in cams}
    pred = {cid: (d - 1.0) / 2.5 for cid, d in true.items()}  # the predictor is off by an affine map
    rng = np.random.default_rng(0)
    sq = np.column_stack([rng.uniform(-0.9, -0.1, 60), rng.uniform(-0.9, 0.9, 60), np.full(60, 4.0)])
    back = np.column_stack([rng.uniform(-3, 3, 200), rng.uniform(-3, 3, 200), np.full(200, BACK_Z)])
    sfm = PointCloud(np.vstack([sq, back]), np.full((260, 3), 0.5))
    return scene, sfm, true, pred


def test_pipeline_points_on_true_surfaces(raycast_scene, tmp_path):
    scene, sfm, _, pred = raycast_scene
    for cid, d in pred.items():
        write_pfm(tmp_path / f"{cid}.pfm", d)
    depths = load_depths(tmp_path, [c.id for c in scene.cameras])
    cloud, report = monodepth_pipeline(scene, sfm, depths, None, MonodepthConfig(seed=2))
    assert len(cloud) > 50
    assert all(not r.skipped for r in report.images)
    assert all(r.scale == pytest.approx(2.5, rel=1e-5) for r in report.images)
    assert surface_distance(cloud.positions).max() <= 1e-3 * scene.scene_extent
    on_sphere = np.abs(np.linalg.norm(cloud.positions - SPHERE[0], axis=1) - SPHERE[1]) < 1e-3
    assert on_sphere.sum() > 0
    again, _ = monodepth_pipeline(scene, sfm, depths, None, MonodepthConfig(seed=2))
    np.testing.assert_array_equal(cloud.positions, again.positions)


def test_pipeline_injected_floater_depth_is_filtered(raycast_scene):
    scene, sfm, _, pred = raycast_scene
    depths = dict(pred)
    bad = pred["0"].copy()
    bad[20:28, 20:28] = (2.0 - 1.0) / 2.5  # a blob hovering at depth 2 in one view
    depths["0"] = bad
    cloud, _ = monodepth_pipeline(scene, sfm, depths, None, MonodepthConfig(seed=2))
    assert surface_distance(cloud.positions).max() <= 1e-3 * scene.scene_extent


def test_pipeline_failures(raycast_scene):
    scene, sfm, _, pred = raycast_scene
    with pytest.raises(InvalidInputError):
        monodepth_pipeline(scene, sfm, {})
    partial = {"1": pred["1"]}
    _, report = monodepth_pipeline(scene, sfm, partial)
    assert sum(r.skipped for r in report.images) == len(scene.cameras) - 1
