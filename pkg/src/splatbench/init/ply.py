"""PLY vertex I/O for point clouds and Gaussian clouds (ascii and binary little-endian)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..core import GaussianCloud, InvalidInputError, PointCloud, num_sh_coeffs

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
NUMPY_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort", "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


def _parse_header(data: bytes, path):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise InvalidInputError(f"{path}: not a PLY file")
    body_start = data.index(b"\n", end) + 1
    lines = data[:end].decode("ascii").splitlines()
    fmt = None
    elements = []  # [name, count, [(prop, dtype)]]
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise InvalidInputError(f"{path}: property before any element")
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], None))
            else:
                if tok[1] not in PLY_TYPES:
                    raise InvalidInputError(f"{path}: unknown property type {tok[1]}")
                elements[-1][2].append((tok[2], PLY_TYPES[tok[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise InvalidInputError(f"{path}: unsupported PLY format {fmt!r} (ascii or binary_little_endian only)")
    return fmt, elements, body_start


def read_ply_vertices(path) -> dict:
    """Return the ``vertex`` element as a mapping of property name to array."""
    path = Path(path)
    data = path.read_bytes()
    fmt, elements, start = _parse_header(data, path)
    if not elements or elements[0][0] != "vertex":
        raise InvalidInputError(f"{path}: the first PLY element must be 'vertex'")
    _, count, props = elements[0]
    if any(dt is None for _, dt in props):
        raise InvalidInputError(f"{path}: list properties in the vertex element are not supported")
    dtype = np.dtype([(name, "<" + dt) for name, dt in props])
    if fmt == "binary_little_endian":
        need = count * dtype.itemsize
        if len(data) - start < need:
            raise InvalidInputError(f"{path}: truncated vertex data ({len(data) - start} of {need} bytes)")
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=start)
    else:
        rows = data[start:].decode("ascii").split("\n")
        rows = [r for r in rows if r.strip()][:count]
        if len(rows) < count:
            raise InvalidInputError(f"{path}: expected {count} vertex rows, found {len(rows)}")
        table = np.array([r.split()[: len(props)] for r in rows], dtype=np.float64).reshape(count, len(props))
        rec = np.zeros(count, dtype=dtype)
        for k, (name, _) in enumerate(props):
            rec[name] = table[:, k]
    return {name: np.array(rec[name]) for name, _ in props}


def write_ply_vertices(path, columns: dict, binary: bool = True) -> None:
    """Write equal-length 1-D arrays as the properties of a ``vertex`` element."""
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    count = len(arrays[0]) if arrays else 0
    dtype = np.dtype([(n, "<" + a.dtype.str[1:]) for n, a in zip(names, arrays)])
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {count}"]
    for n, a in zip(names, arrays):
        header.append(f"property {NUMPY_TO_PLY[a.dtype.str[1:]]} {n}")
    header.append("end_header")
    rec = np.zeros(count, dtype=dtype)
    for n, a in zip(names, arrays):
        rec[n] = a
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
        else:
            for row in rec:
                fh.write((" ".join(repr(v.item()) for v in row) + "\n").encode("ascii"))


def read_point_ply(path) -> PointCloud:
    cols = read_ply_vertices(path)
    missing = [k for k in ("x", "y", "z", "red", "green", "blue") if k not in cols]
    if missing:
        raise InvalidInputError(f"{path}: PLY vertex element lacks {missing}")
    pos = np.stack([cols[k] for k in "xyz"], axis=1).astype(np.float64)
    rgb = np.stack([cols[k] for k in ("red", "green", "blue")], axis=1)
    if np.issubdtype(rgb.dtype, np.integer):
        colors = rgb.astype(np.float64) / np.iinfo(rgb.dtype).max
    else:
        colors = rgb.astype(np.float64)
    pc = PointCloud(pos, colors)
    pc.validate()
    return pc


def write_point_ply(path, pc: PointCloud, binary: bool = True) -> None:
    rgb = np.clip(np.round(pc.colors * 255.0), 0, 255).astype(np.uint8)
    cols = {k: pc.positions[:, i].astype(np.float32) for i, k in enumerate("xyz")}
    cols.update({k: rgb[:, i] for i, k in enumerate(("red", "green", "blue"))})
    write_ply_vertices(path, cols, binary)


def write_gaussian_ply(path, cloud: GaussianCloud) -> None:
    """Gaussian cloud in the property layout used by common splat viewers."""
    n = len(cloud)
    k = cloud.sh_coeffs.shape[1]
    cols = {a: cloud.means[:, i] for i, a in enumerate("xyz")}
    cols.update({f"f_dc_{c}": cloud.sh_coeffs[:, 0, c] for c in range(3)})
    rest = cloud.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, -1)
    cols.update({f"f_rest_{j}": rest[:, j] for j in range(3 * (k - 1))})
    cols["opacity"] = cloud.opacity_logits
    cols.update({f"scale_{i}": cloud.log_scales[:, i] for i in range(3)})
    cols.update({f"rot_{i}": cloud.rotations[:, i] for i in range(4)})
    write_ply_vertices(path, {name: np.asarray(v, dtype=np.float32) for name, v in cols.items()})


def read_gaussian_ply(path) -> GaussianCloud:
    cols = read_ply_vertices(path)
    need = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"] + [f"scale_{i}" for i in range(3)] + [f"rot_{i}" for i in range(4)]
    missing = [k for k in need if k not in cols]
    if missing:
        raise InvalidInputError(f"{path}: not a Gaussian PLY, missing {missing}")
    n_rest = sum(1 for name in cols if name.startswith("f_rest_"))
    k = n_rest // 3 + 1
    degree = round(k**0.5) - 1
    if degree > 3 or num_sh_coeffs(degree) != k:
        raise InvalidInputError(f"{path}: {n_rest} f_rest properties do not form a complete SH band")
    n = len(cols["x"])
    sh = np.zeros((n, k, 3))
    sh[:, 0] = np.stack([cols[f"f_dc_{c}"] for c in range(3)], axis=1)
    if k > 1:
        rest = np.stack([cols[f"f_rest_{j}"] for j in range(n_rest)], axis=1)
        sh[:, 1:] = rest.reshape(n, 3, k - 1).transpose(0, 2, 1)

    def f64(names):
        return np.stack([cols[a] for a in names], axis=1).astype(np.float64)

    return GaussianCloud(
        f64("xyz"),
        f64([f"scale_{i}" for i in range(3)]),
        f64([f"rot_{i}" for i in range(4)]),
        cols["opacity"].astype(np.float64),
        sh,
    )
