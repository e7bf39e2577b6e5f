import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from splatbench.bench.synthetic import make_scene
from splatbench.core import Camera, GaussianCloud, InvalidInputError, PointCloud, sh_evaluate
from splatbench.init import (
    ColmapParseError,
    InitSpec,
    LoadedScene,
    build_initial_cloud,
    edgs_scale_multiplier,
    import_edgs,
    load_colmap_sparse,
    load_scene,
    parse_size,
    perturb,
    points_to_gaussians,
    random_points,
    read_edgs,
    read_gaussian_ply,
    read_point_ply,
    resolve_init_size,
    save_scene,
    uniform_subsample,
    write_colmap_binary,
    write_colmap_text,
    write_edgs,
    write_gaussian_ply,
    write_point_ply,
)
from splatbench.rasterizer import render

CAMERAS_TXT = """# Camera list
1 PINHOLE 640 480 500.0 510.0 320.0 240.0
2 SIMPLE_PINHOLE 320 240 250.0 160.0 120.0
"""
IMAGES_TXT = """# Image list
1 1.0 0.0 0.0 0.0 0.1 0.2 0.3 1 b.png
100.0 200.0 1 300.0 400.0 -1
2 0.7071067811865476 0.0 0.7071067811865476 0.0 -1.0 0.0 2.0 2 a.png

"""
POINTS_TXT = """# Points
1 0.0 0.0 5.0 255 0 0 0.5 1 0
2 1.0 -1.0 6.0 0 255 0 0.25 1 1 2 0
3 -1.0 2.0 7.0 0 0 255 1.0
"""


@pytest.fixture
def text_model(tmp_path):
    d = tmp_path / "model"
    d.mkdir()
    (d / "cameras.txt").write_text(CAMERAS_TXT)
    (d / "images.txt").write_text(IMAGES_TXT)
    (d / "points3D.txt").write_text(POINTS_TXT)
    return d


# --- COLMAP ---------------------------------------------------------------


def test_golden_text_model(text_model):
    model = load_colmap_sparse(text_model)
    cams = model.cameras()
    assert [c.image_name for c in cams] == ["a.png", "b.png"]  # ordered by name
    a, b = cams
    assert (a.fx, a.fy, a.cx, a.cy, a.width, a.height) == (250.0, 250.0, 160.0, 120.0, 320, 240)
    assert (b.fx, b.fy, b.cx, b.cy, b.width, b.height) == (500.0, 510.0, 320.0, 240.0, 640, 480)
    np.testing.assert_allclose(b.rotation, np.eye(3))
    np.testing.assert_allclose(b.translation, [0.1, 0.2, 0.3])
    np.testing.assert_allclose(a.rotation, [[0, 0, 1], [0, 1, 0], [-1, 0, 0]], atol=1e-12)
    assert a.id == "2" and b.id == "1"
    np.testing.assert_array_equal(model.point_ids, [1, 2, 3])
    np.testing.assert_allclose(model.points.positions, [[0, 0, 5], [1, -1, 6], [-1, 2, 7]])
    np.testing.assert_allclose(model.points.colors, np.eye(3))
    np.testing.assert_allclose(model.errors, [0.5, 0.25, 1.0])


def test_binary_and_text_agree(text_model, tmp_path):
    model = load_colmap_sparse(text_model)
    write_colmap_binary(model, tmp_path / "bin")
    write_colmap_text(model, tmp_path / "txt")
    for other in (load_colmap_sparse(tmp_path / "bin"), load_colmap_sparse(tmp_path / "txt")):
        assert other.intrinsics == model.intrinsics
        assert other.images == model.images
        np.testing.assert_array_equal(other.point_ids, model.point_ids)
        np.testing.assert_array_equal(other.points.positions, model.points.positions)
        np.testing.assert_array_equal(other.points.colors, model.points.colors)
        np.testing.assert_array_equal(other.errors, model.errors)


def test_empty_points(text_model):
    (text_model / "points3D.txt").write_text("# nothing\n")
    model = load_colmap_sparse(text_model)
    assert len(model.points) == 0


def test_unsupported_model_named(text_model):
    (text_model / "cameras.txt").write_text("1 OPENCV 10 10 5 5 5 5 0 0 0 0\n2 OPENCV 10 10 5 5 5 5 0 0 0 0\n")
    model = load_colmap_sparse(text_model)
    with pytest.raises(InvalidInputError, match="OPENCV"):
        model.cameras()


def test_text_parse_error_offset(text_model):
    bad = "# header\n1 PINHOLE 640 480 500 510 320 240\n2 PINHOLE 64x 48 1 1 1 1\n"
    (text_model / "cameras.txt").write_text(bad)
    with pytest.raises(ColmapParseError) as info:
        load_colmap_sparse(text_model)
    assert info.value.offset == bad.index("2 PINHOLE")


def test_binary_truncation_offset(text_model, tmp_path):
    write_colmap_binary(load_colmap_sparse(text_model), tmp_path / "bin")
    path = tmp_path / "bin" / "points3D.bin"
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(ColmapParseError) as info:
        load_colmap_sparse(tmp_path / "bin")
    assert 0 < info.value.offset <= len(data)


def test_binary_layout_by_hand(tmp_path):
    d = tmp_path / "hand"
    d.mkdir()
    (d / "cameras.bin").write_bytes(struct.pack("<Q", 1) + struct.pack("<iiQQ", 7, 1, 8, 6) + struct.pack("<4d", 4, 5, 3.5, 2.5))
    img = struct.pack("<Q", 1) + struct.pack("<idddddddi", 3, 1, 0, 0, 0, 1, 2, 3, 7) + b"x.png\0"
    img += struct.pack("<Q", 1) + struct.pack("<ddQ", 1.0, 2.0, 9)
    (d / "images.bin").write_bytes(img)
    pts = struct.pack("<Q", 1) + struct.pack("<QdddBBBd", 9, 1, 2, 3, 255, 51, 0, 0.1) + struct.pack("<Q", 1) + struct.pack("<ii", 3, 0)
    (d / "points3D.bin").write_bytes(pts)
    model = load_colmap_sparse(d)
    (cam,) = model.cameras()
    assert (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, cam.id) == (4, 5, 3.5, 2.5, 8, 6, "3")
    np.testing.assert_allclose(model.points.colors, [[1.0, 0.2, 0.0]])


# --- PLY ------------------------------------------------------------------


@pytest.mark.parametrize("binary", [True, False])
def test_point_ply_round_trip(tmp_path, binary):
    rng = np.random.default_rng(0)
    pc = PointCloud(rng.normal(size=(50, 3)).astype(np.float32), rng.integers(0, 256, size=(50, 3)) / 255.0)
    write_point_ply(tmp_path / "p.ply", pc, binary)
    back = read_point_ply(tmp_path / "p.ply")
    np.testing.assert_array_equal(back.positions, pc.positions)
    np.testing.assert_allclose(back.colors, pc.colors, atol=1e-12)


def test_ascii_ply_by_hand(tmp_path):
    text = (
        "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
        "1 2 3 255 0 0\n-1 -2 -3 0 0 255\n"
    )
    (tmp_path / "h.ply").write_text(text)
    pc = read_point_ply(tmp_path / "h.ply")
    np.testing.assert_array_equal(pc.positions, [[1, 2, 3], [-1, -2, -3]])
    np.testing.assert_array_equal(pc.colors, [[1, 0, 0], [0, 0, 1]])


@pytest.mark.parametrize(
    "header",
    [
        "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
        "not a ply at all",
    ],
)
def test_ply_rejections(tmp_path, header):
    (tmp_path / "bad.ply").write_text(header)
    with pytest.raises(InvalidInputError):
        read_point_ply(tmp_path / "bad.ply")


@pytest.mark.parametrize("degree", [0, 1, 3])
def test_gaussian_ply_round_trip(tmp_path, degree):
    rng = np.random.default_rng(degree)
    n = 7
    q = rng.normal(size=(n, 4))
    cloud = GaussianCloud(
        rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), q / np.linalg.norm(q, axis=1, keepdims=True),
        rng.normal(size=n), rng.normal(size=(n, (degree + 1) ** 2, 3)),
    ).astype(np.float32).astype(np.float64)
    write_gaussian_ply(tmp_path / "g.ply", cloud)
    back = read_gaussian_ply(tmp_path / "g.ply")
    for k, v in cloud.arrays().items():
        np.testing.assert_array_equal(getattr(back, k), v)


# --- points to Gaussians -----------------------------------------------------


def test_white_point_colour():
    g = points_to_gaussians(PointCloud([[0, 0, 0]], [[1, 1, 1]]))
    np.testing.assert_allclose(sh_evaluate([0, 0, 1], g.sh_coeffs[0], 0), 1.0, atol=1e-6)


@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.sampled_from([0, 1, 3]))
def test_conversion_contract(seed, n, degree):
    rng = np.random.default_rng(seed)
    pc = PointCloud(rng.normal(size=(n, 3)), rng.uniform(size=(n, 3)))
    g = points_to_gaussians(pc, sh_degree=degree)
    assert np.all(np.abs(g.opacities - 0.1) <= 1e-9)
    np.testing.assert_array_equal(g.means, pc.positions)
    assert np.all(g.log_scales == g.log_scales[:, :1])
    np.testing.assert_array_equal(g.rotations, np.tile([1.0, 0, 0, 0], (n, 1)))
    assert not g.sh_coeffs[:, 1:].any()


def test_two_points_scale_is_distance():
    g = points_to_gaussians(PointCloud([[0, 0, 0], [0, 3.5, 0]], np.zeros((2, 3))))
    np.testing.assert_allclose(g.scales, 3.5)


def test_empty_cloud_rejected():
    with pytest.raises(InvalidInputError):
        points_to_gaussians(PointCloud(np.zeros((0, 3)), np.zeros((0, 3))))


def test_saturated_render_reproduces_colour():
    colour = np.array([0.2, 0.6, 0.9])
    g = points_to_gaussians(PointCloud([[0, 0, 0], [5, 5, 5]], [colour, colour]))
    g.opacity_logits[:] = 20.0
    cam = Camera.look_at((0, 0, -3), (0, 0, 0), up=(0, -1, 0), fx=20, width=9, height=9)
    img = render(g.take([0]), cam).image
    np.testing.assert_allclose(img[4, 4], colour, atol=1e-2)


# --- subsampling and noise -----------------------------------------------------


def test_subsample_edges():
    pc = PointCloud(np.arange(30.0).reshape(10, 3), np.zeros((10, 3)))
    full = uniform_subsample(pc, 10, 3)
    assert sorted(map(tuple, full.positions)) == sorted(map(tuple, pc.positions))
    assert len(uniform_subsample(pc, 0, 3)) == 0
    with pytest.raises(InvalidInputError):
        uniform_subsample(pc, 11, 3)


@given(st.integers(0, 2**32 - 1), st.integers(0, 40))
def test_subsample_exact_and_distinct(seed, n):
    pc = PointCloud(np.arange(120.0).reshape(40, 3), np.zeros((40, 3)))
    out = uniform_subsample(pc, n, seed)
    assert len(out) == n == len({tuple(p) for p in out.positions})
    again = uniform_subsample(pc, n, seed)
    np.testing.assert_array_equal(out.positions, again.positions)


def test_subsample_uniform_frequencies():
    pc = PointCloud(np.arange(12.0).reshape(4, 3), np.zeros((4, 3)))
    rng = np.random.default_rng(2024)
    counts = np.zeros(4)
    trials = 100_000
    for _ in range(trials):
        counts[int(uniform_subsample(pc, 1, rng).positions[0, 0]) // 3] += 1
    sd = math.sqrt(trials * 0.25 * 0.75)
    assert np.all(np.abs(counts - trials / 4) <= 3 * sd)
    assert stats.chisquare(counts).pvalue > 0.001


def test_perturb_statistics():
    n = 100_000
    out = perturb(np.zeros((n, 3)), 0.01, 10.0, seed=5)
    np.testing.assert_allclose(out.std(axis=0), 0.1, rtol=0.05)
    assert np.all(np.abs(out.mean(axis=0)) < 3 * 0.1 / math.sqrt(n))
    np.testing.assert_array_equal(perturb(out, 0.0, 10.0), out)
    with pytest.raises(InvalidInputError):
        perturb(out, -0.1, 10.0)


def test_random_points_in_cube():
    pc = random_points(500, [1, 2, 3], 2.0, seed=1)
    assert np.all(np.abs(pc.positions - [1, 2, 3]) <= 2.0)
    assert np.all((pc.colors >= 0) & (pc.colors <= 1))


# --- sizing ----------------------------------------------------------------


def test_resolve_sizes():
    assert resolve_init_size(InitSpec("sfm", "fraction", 0.5), 1000, 321) == 500
    assert resolve_init_size(InitSpec("sfm", "match-sfm"), 1000, 321) == 321
    assert resolve_init_size(InitSpec("dense_ply", "compare"), 50_000, 321, [40_000, 55_000]) == 40_000
    assert resolve_init_size(InitSpec("dense_ply", "absolute", 77), None, None) == 77
    assert resolve_init_size(InitSpec("dense_ply", "all"), None, None, source_size=9) == 9
    with pytest.raises(InvalidInputError):
        resolve_init_size(InitSpec("sfm", "fraction", 0.5), None, 321)


def test_spec_parsing():
    s = InitSpec.parse("random:2000@0.01", seed=4)
    assert (s.source, s.size_mode, s.size_value, s.noise, s.seed) == ("random", "absolute", 2000, 0.01, 4)
    s = InitSpec.parse("dense_ply=/tmp/x.ply:0.75")
    assert (s.source, s.path, s.size_mode, s.size_value) == ("dense_ply", "/tmp/x.ply", "fraction", 0.75)
    assert InitSpec.parse("sfm").size_mode == "match-sfm"
    assert parse_size(3) == ("absolute", 3.0) and parse_size(0.5) == ("fraction", 0.5)
    for bad in ["lidar", "sfm:abc", "sfm@-0.1", "sfm:0.0"]:
        with pytest.raises(InvalidInputError):
            InitSpec.parse(bad)


# --- EDGS ------------------------------------------------------------------


def edgs_by_hand(path, rows, degree):
    with open(path, "wb") as fh:
        fh.write(b"EDGS" + struct.pack("<IQI", 1, len(rows), degree))
        for r in rows:
            fh.write(struct.pack(f"<{len(r)}f", *r))


def test_edgs_reader_matches_layout(tmp_path):
    rows = [[1, 2, 3, -1, -2, -3, 1, 0, 0, 0, 0.5, 0.1, 0.2, 0.3], [4, 5, 6, 0, 0, 0, 0, 1, 0, 0, -0.5, 1, 1, 1]]
    edgs_by_hand(tmp_path / "e.edgs", rows, 0)
    g = read_edgs(tmp_path / "e.edgs")
    np.testing.assert_array_equal(g.means, [[1, 2, 3], [4, 5, 6]])
    np.testing.assert_array_equal(g.log_scales[0], [-1, -2, -3])
    np.testing.assert_array_equal(g.rotations[1], [0, 1, 0, 0])
    np.testing.assert_allclose(g.opacity_logits, [0.5, -0.5], rtol=1e-7)
    np.testing.assert_allclose(g.sh_coeffs[0, 0], [0.1, 0.2, 0.3], rtol=1e-7)


def _edgs_cloud(n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return GaussianCloud(
        rng.normal(size=(n, 3)), rng.normal(size=(n, 3)) - 3, q / np.linalg.norm(q, axis=1, keepdims=True),
        rng.normal(size=n), rng.normal(size=(n, 4, 3)),
    ).astype(np.float32).astype(np.float64)


def test_edgs_multiplier_and_subset(tmp_path):
    assert edgs_scale_multiplier(1000, 250) == 4.0
    assert edgs_scale_multiplier(1000, 1000) == 1.0
    cloud = _edgs_cloud(1000)
    write_edgs(tmp_path / "d.edgs", cloud)
    same = import_edgs(tmp_path / "d.edgs", 1000)
    for k, v in cloud.arrays().items():
        np.testing.assert_array_equal(getattr(same, k), v)
    thin = import_edgs(tmp_path / "d.edgs", 250, seed=3)
    assert len(thin) == 250
    rows = {tuple(m): i for i, m in enumerate(cloud.means)}
    idx = np.array([rows[tuple(m)] for m in thin.means])
    assert len(set(idx)) == 250
    np.testing.assert_array_equal(thin.rotations, cloud.rotations[idx])
    np.testing.assert_array_equal(thin.sh_coeffs, cloud.sh_coeffs[idx])
    np.testing.assert_allclose(thin.scales, cloud.scales[idx] * 4.0, rtol=1e-12)


@pytest.mark.parametrize(
    "blob",
    [b"EDG", b"XXXX" + struct.pack("<IQI", 1, 0, 0), b"EDGS" + struct.pack("<IQI", 2, 0, 0),
     b"EDGS" + struct.pack("<IQI", 1, 2, 0) + b"\0" * 8],
)
def test_edgs_malformed(tmp_path, blob):
    (tmp_path / "m.edgs").write_bytes(blob)
    with pytest.raises(InvalidInputError):
        read_edgs(tmp_path / "m.edgs")


def test_edgs_zero_target(tmp_path):
    write_edgs(tmp_path / "d.edgs", _edgs_cloud(5))
    with pytest.raises(InvalidInputError):
        import_edgs(tmp_path / "d.edgs", 0)


# --- scenes on disk ----------------------------------------------------------


@pytest.mark.parametrize("binary", [True, False])
def test_scene_round_trip(tmp_path, binary):
    syn = make_scene(n_gaussians=10, n_views=5, size=16, seed=2)
    root = save_scene(tmp_path / "s", syn.scene.cameras, syn.images, syn.points, binary=binary)
    loaded = load_scene(root, holdout_every=2)
    assert loaded.scene.scene_id == "s"
    assert len(loaded.scene.test_ids) == 3
    assert len(loaded.sfm_points) == 10
    for cam, orig in zip(loaded.scene.cameras, syn.scene.cameras):
        np.testing.assert_allclose(cam.rotation, orig.rotation, atol=1e-12)
        np.testing.assert_allclose(cam.translation, orig.translation, atol=1e-12)
        assert (cam.fx, cam.cx, cam.width) == (orig.fx, orig.cx, orig.width)
    imgs = loaded.images()
    for cam, orig in zip(loaded.scene.cameras, syn.scene.cameras):
        np.testing.assert_allclose(imgs[cam.id], syn.images[orig.id], atol=0.5 / 255 + 1e-12)


def test_missing_image_rejected(tmp_path):
    syn = make_scene(n_gaussians=5, n_views=3, size=16, seed=2)
    root = save_scene(tmp_path / "s", syn.scene.cameras, syn.images, syn.points)
    next((root / "images").iterdir()).unlink()
    with pytest.raises(InvalidInputError, match="missing"):
        load_scene(root)


def test_build_initial_cloud_sources(tmp_path, tiny_scene):
    loaded = LoadedScene.in_memory(tiny_scene.scene, tiny_scene.points, tiny_scene.images)
    assert len(build_initial_cloud(InitSpec("sfm"), loaded)) == 20
    assert len(build_initial_cloud(InitSpec("sfm", "fraction", 0.5), loaded, gmax=20)) == 10
    assert len(build_initial_cloud(InitSpec("random", "absolute", 7), loaded)) == 7
    assert len(build_initial_cloud(InitSpec("sfm"), loaded, cap=12)) == 12
    write_point_ply(tmp_path / "d.ply", tiny_scene.points)
    dense = build_initial_cloud(InitSpec("dense_ply", "absolute", 5, path=str(tmp_path / "d.ply")), loaded)
    assert len(dense) == 5
    noisy = build_initial_cloud(InitSpec("sfm", noise=0.1, seed=1), loaded)
    clean = build_initial_cloud(InitSpec("sfm", seed=1), loaded)
    assert not np.allclose(noisy.means, clean.means)
    again = build_initial_cloud(InitSpec("sfm", noise=0.1, seed=1), loaded)
    np.testing.assert_array_equal(noisy.means, again.means)
    with pytest.raises(InvalidInputError):
        build_initial_cloud(InitSpec("sfm", "absolute", 21), loaded)
