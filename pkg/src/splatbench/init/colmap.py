"""Reader and writer for COLMAP sparse models (text and binary encodings)."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import Camera, InvalidInputError, PointCloud, quat_to_rotmat

# model id -> (name, parameter count)
CAMERA_MODELS = {
    0: ("SIMPLE_PINHOLE", 3),
    1: ("PINHOLE", 4),
    2: ("SIMPLE_RADIAL", 4),
    3: ("RADIAL", 5),
    4: ("OPENCV", 8),
    5: ("OPENCV_FISHEYE", 8),
    6: ("FULL_OPENCV", 12),
    7: ("FOV", 5),
    8: ("SIMPLE_RADIAL_FISHEYE", 4),
    9: ("RADIAL_FISHEYE", 5),
    10: ("THIN_PRISM_FISHEYE", 12),
}
MODEL_IDS = {name: mid for mid, (name, _) in CAMERA_MODELS.items()}
SUPPORTED_MODELS = ("SIMPLE_PINHOLE", "PINHOLE")


class ColmapParseError(InvalidInputError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


@dataclass
class Intrinsics:
    model: str
    width: int
    height: int
    params: tuple

    def pinhole(self):
        """``(fx, fy, cx, cy)``; only undistorted pinhole models are accepted."""
        if self.model == "PINHOLE":
            return tuple(self.params)
        if self.model == "SIMPLE_PINHOLE":
            f, cx, cy = self.params
            return f, f, cx, cy
        raise InvalidInputError(
            f"unsupported camera model {self.model}; undistort the scene to one of {SUPPORTED_MODELS}"
        )


@dataclass
class ImagePose:
    qvec: tuple  # world-to-camera rotation (w, x, y, z)
    tvec: tuple
    camera_id: int
    name: str


@dataclass
class ColmapModel:
    intrinsics: dict = field(default_factory=dict)  # camera id -> Intrinsics
    images: dict = field(default_factory=dict)  # image id -> ImagePose
    point_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    points: PointCloud = field(default_factory=lambda: PointCloud(np.zeros((0, 3)), np.zeros((0, 3))))
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def cameras(self) -> list:
        """One :class:`Camera` per registered image, ordered by image name."""
        out = []
        for image_id, img in sorted(self.images.items(), key=lambda kv: kv[1].name):
            if img.camera_id not in self.intrinsics:
                raise InvalidInputError(f"image {img.name} references unknown camera {img.camera_id}")
            intr = self.intrinsics[img.camera_id]
            fx, fy, cx, cy = intr.pinhole()
            rot = quat_to_rotmat(np.asarray(img.qvec, dtype=np.float64))
            out.append(Camera(fx, fy, cx, cy, intr.width, intr.height, rot, img.tvec, id=str(image_id), image_name=img.name))
        return out

    def image_ids(self) -> dict:
        return {img.name: image_id for image_id, img in self.images.items()}


# --- text -----------------------------------------------------------------


def _text_records(path: Path):
    """Yield ``(byte offset, tokens)`` for every non-comment line."""
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("utf-8").strip()
            if line and not line.startswith("#"):
                yield offset, line.split()
            offset += len(raw)


def _parse_fields(path, offset, tokens, types):
    try:
        return [t(v) for t, v in zip(types, tokens)]
    except ValueError as exc:
        raise ColmapParseError(path, offset, str(exc)) from None


def read_cameras_text(path) -> dict:
    out = {}
    for offset, tok in _text_records(Path(path)):
        if len(tok) < 4:
            raise ColmapParseError(path, offset, "camera line needs id, model, width, height")
        cam_id, model, width, height = _parse_fields(path, offset, tok[:4], (int, str, int, int))
        if model not in MODEL_IDS:
            raise ColmapParseError(path, offset, f"unknown camera model {model}")
        n = CAMERA_MODELS[MODEL_IDS[model]][1]
        if len(tok) != 4 + n:
            raise ColmapParseError(path, offset, f"{model} expects {n} parameters, got {len(tok) - 4}")
        params = tuple(_parse_fields(path, offset, tok[4:], [float] * n))
        out[cam_id] = Intrinsics(model, width, height, params)
    return out


def read_images_text(path) -> dict:
    # images come in line pairs; the observation line may be empty, so blank
    # lines are kept here rather than filtered
    lines = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("utf-8").strip()
            if not line.startswith("#"):
                lines.append((offset, line))
            offset += len(raw)
    out = {}
    k = 0
    while k < len(lines):
        offset, line = lines[k]
        if not line:
            k += 1
            continue
        tok = line.split()
        if len(tok) < 10:
            raise ColmapParseError(path, offset, "image line needs 10 fields")
        vals = _parse_fields(path, offset, tok[:9], [int] + [float] * 7 + [int])
        out[vals[0]] = ImagePose(tuple(vals[1:5]), tuple(vals[5:8]), vals[8], " ".join(tok[9:]))
        if k + 1 < len(lines) and len(lines[k + 1][1].split()) % 3 != 0:
            raise ColmapParseError(path, lines[k + 1][0], "points2D line must hold (x, y, id) triples")
        k += 2
    return out


def read_points_text(path):
    ids, xyz, rgb, err = [], [], [], []
    for offset, tok in _text_records(Path(path)):
        if len(tok) < 8 or (len(tok) - 8) % 2:
            raise ColmapParseError(path, offset, "point line needs id, xyz, rgb, error and track pairs")
        vals = _parse_fields(path, offset, tok[:8], [int] + [float] * 3 + [int] * 3 + [float])
        ids.append(vals[0])
        xyz.append(vals[1:4])
        rgb.append(vals[4:7])
        err.append(vals[7])
    return _points(ids, xyz, rgb, err)


def _points(ids, xyz, rgb, err):
    ids = np.asarray(ids, dtype=np.int64)
    pc = PointCloud(np.asarray(xyz, dtype=np.float64).reshape(-1, 3), np.asarray(rgb, dtype=np.float64).reshape(-1, 3) / 255.0)
    return ids, pc, np.asarray(err, dtype=np.float64)


# --- binary ---------------------------------------------------------------


class _Reader:
    def __init__(self, path):
        self.path = Path(path)
        self.data = self.path.read_bytes()
        self.pos = 0

    def read(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        if self.pos + size > len(self.data):
            raise ColmapParseError(self.path, self.pos, f"unexpected end of file (need {size} bytes)")
        vals = struct.unpack_from("<" + fmt, self.data, self.pos)
        self.pos += size
        return vals

    def skip(self, n: int, what: str) -> None:
        if self.pos + n > len(self.data):
            raise ColmapParseError(self.path, self.pos, f"unexpected end of file in {what}")
        self.pos += n

    def cstring(self) -> str:
        end = self.data.find(b"\0", self.pos)
        if end < 0:
            raise ColmapParseError(self.path, self.pos, "unterminated image name")
        s = self.data[self.pos:end].decode("utf-8")
        self.pos = end + 1
        return s

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise ColmapParseError(self.path, self.pos, "trailing bytes")


def read_cameras_binary(path) -> dict:
    r = _Reader(path)
    (count,) = r.read("Q")
    out = {}
    for _ in range(count):
        start = r.pos
        cam_id, model_id, width, height = r.read("iiQQ")
        if model_id not in CAMERA_MODELS:
            raise ColmapParseError(path, start, f"unknown camera model id {model_id}")
        name, n = CAMERA_MODELS[model_id]
        out[cam_id] = Intrinsics(name, width, height, r.read("d" * n))
    r.finish()
    return out


def read_images_binary(path) -> dict:
    r = _Reader(path)
    (count,) = r.read("Q")
    out = {}
    for _ in range(count):
        vals = r.read("idddddddi")
        name = r.cstring()
        (n2d,) = r.read("Q")
        r.skip(24 * n2d, "points2D")
        out[vals[0]] = ImagePose(tuple(vals[1:5]), tuple(vals[5:8]), vals[8], name)
    r.finish()
    return out


def read_points_binary(path):
    r = _Reader(path)
    (count,) = r.read("Q")
    ids, xyz, rgb, err = [], [], [], []
    for _ in range(count):
        vals = r.read("QdddBBBd")
        (track,) = r.read("Q")
        r.skip(8 * track, "track")
        ids.append(vals[0])
        xyz.append(vals[1:4])
        rgb.append(vals[4:7])
        err.append(vals[7])
    r.finish()
    return _points(ids, xyz, rgb, err)


# --- model level ----------------------------------------------------------


def find_model_dir(scene_dir) -> Path:
    """Locate the sparse model inside a scene directory (or accept the model dir itself)."""
    scene_dir = Path(scene_dir)
    for cand in (scene_dir, scene_dir / "sparse" / "0", scene_dir / "sparse"):
        if any((cand / f"cameras.{ext}").exists() for ext in ("bin", "txt")):
            return cand
    raise InvalidInputError(f"no COLMAP model (cameras.bin/.txt) under {scene_dir}")


def load_colmap_sparse(model_dir) -> ColmapModel:
    """Parse ``cameras``, ``images`` and ``points3D``, preferring the binary files."""
    d = find_model_dir(model_dir)
    if (d / "cameras.bin").exists():
        intr = read_cameras_binary(d / "cameras.bin")
        images = read_images_binary(d / "images.bin")
        ids, pc, err = read_points_binary(d / "points3D.bin") if (d / "points3D.bin").exists() else _points([], [], [], [])
    else:
        intr = read_cameras_text(d / "cameras.txt")
        images = read_images_text(d / "images.txt")
        ids, pc, err = read_points_text(d / "points3D.txt") if (d / "points3D.txt").exists() else _points([], [], [], [])
    return ColmapModel(intr, images, ids, pc, err)


def _rgb_bytes(colors: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)


def write_colmap_text(model: ColmapModel, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cameras.txt", "w") as fh:
        fh.write("# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for cid, c in sorted(model.intrinsics.items()):
            fh.write(" ".join([str(cid), c.model, str(c.width), str(c.height)] + [repr(float(p)) for p in c.params]) + "\n")
    with open(out / "images.txt", "w") as fh:
        fh.write("# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for iid, img in sorted(model.images.items()):
            nums = [repr(float(v)) for v in (*img.qvec, *img.tvec)]
            fh.write(" ".join([str(iid), *nums, str(img.camera_id), img.name]) + "\n\n")
    rgb = _rgb_bytes(model.points.colors)
    with open(out / "points3D.txt", "w") as fh:
        fh.write("# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        for pid, p, c, e in zip(model.point_ids, model.points.positions, rgb, model.errors):
            fh.write(" ".join([str(int(pid)), *(repr(float(v)) for v in p), *(str(int(v)) for v in c), repr(float(e))]) + "\n")


def write_colmap_binary(model: ColmapModel, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cameras.bin", "wb") as fh:
        fh.write(struct.pack("<Q", len(model.intrinsics)))
        for cid, c in sorted(model.intrinsics.items()):
            fh.write(struct.pack("<iiQQ", cid, MODEL_IDS[c.model], c.width, c.height))
            fh.write(struct.pack("<" + "d" * len(c.params), *c.params))
    with open(out / "images.bin", "wb") as fh:
        fh.write(struct.pack("<Q", len(model.images)))
        for iid, img in sorted(model.images.items()):
            fh.write(struct.pack("<idddddddi", iid, *img.qvec, *img.tvec, img.camera_id))
            fh.write(img.name.encode("utf-8") + b"\0")
            fh.write(struct.pack("<Q", 0))
    rgb = _rgb_bytes(model.points.colors)
    with open(out / "points3D.bin", "wb") as fh:
        fh.write(struct.pack("<Q", len(model.point_ids)))
        for pid, p, c, e in zip(model.point_ids, model.points.positions, rgb, model.errors):
            fh.write(struct.pack("<QdddBBBdQ", int(pid), *p, *(int(v) for v in c), float(e), 0))
