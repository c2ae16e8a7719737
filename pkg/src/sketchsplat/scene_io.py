"""Binary little-endian PLY in the common Gaussian-splat vertex layout.

Storage is float32; the in-memory scene is float64, so a round trip is
exact once values are already at float32 granularity.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import FormatError, LengthError
from .gaussians import GaussianScene, sh_count

MAGIC = b"ply\n"
FORMAT_LINE = "format binary_little_endian 1.0"


def property_names(sh_degree: int) -> list[str]:
    rest = 3 * (sh_count(sh_degree) - 1)
    return (
        ["x", "y", "z", "nx", "ny", "nz"]
        + [f"f_dc_{i}" for i in range(3)]
        + [f"f_rest_{i}" for i in range(rest)]
        + ["opacity"]
        + [f"scale_{i}" for i in range(3)]
        + [f"rot_{i}" for i in range(4)]
    )


def _header(count: int, names: list[str]) -> bytes:
    lines = ["ply", FORMAT_LINE, f"element vertex {count}"]
    lines += [f"property float {n}" for n in names]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def scene_to_bytes(scene: GaussianScene) -> bytes:
    n, k = scene.count, sh_count(scene.sh_degree)
    names = property_names(scene.sh_degree)
    table = np.zeros((n, len(names)), dtype="<f4")
    table[:, 0:3] = scene.positions
    table[:, 6:9] = scene.sh_coeffs[:, 0, :]
    rest = 3 * (k - 1)
    # channel-major: all coefficients of red, then green, then blue
    table[:, 9 : 9 + rest] = scene.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, rest)
    o = 9 + rest
    table[:, o] = scene.opacity_logits
    table[:, o + 1 : o + 4] = scene.log_scales
    table[:, o + 4 : o + 8] = scene.rotations
    return _header(n, names) + table.tobytes()


def save_scene(scene: GaussianScene, path) -> None:
    Path(path).write_bytes(scene_to_bytes(scene))


def _parse_header(data: bytes) -> tuple[int, list[str], int]:
    if not data.startswith(MAGIC):
        raise FormatError("not a PLY file (missing 'ply' magic)")
    end = data.find(b"end_header\n")
    if end < 0:
        raise FormatError("PLY header has no end_header line")
    body = end + len(b"end_header\n")
    count, names, fmt = None, [], None
    for raw in data[:end].decode("ascii", errors="replace").splitlines()[1:]:
        parts = raw.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = " ".join(parts)
        elif parts[0] == "element":
            if parts[1] != "vertex" or count is not None:
                raise FormatError(f"unsupported element {parts[1]!r}")
            count = int(parts[2])
        elif parts[0] == "property":
            if len(parts) != 3 or parts[1] not in ("float", "float32"):
                raise FormatError(f"unsupported property declaration {raw!r}")
            names.append(parts[2])
        else:
            raise FormatError(f"unexpected header line {raw!r}")
    if fmt != FORMAT_LINE:
        raise FormatError(f"expected {FORMAT_LINE!r}, got {fmt!r}")
    if count is None:
        raise FormatError("PLY header has no vertex element")
    return count, names, body


def scene_from_bytes(data: bytes) -> GaussianScene:
    count, names, body = _parse_header(data)
    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    degree = math.isqrt(n_rest // 3 + 1) - 1
    expected = property_names(degree)
    if 3 * (sh_count(degree) - 1) != n_rest:
        raise FormatError(f"{n_rest} f_rest properties do not match any SH degree")
    for name in expected:
        if name not in names:
            raise FormatError(f"missing property {name!r}")
    if names != expected:
        extra = [n for n in names if n not in expected]
        raise FormatError(f"unexpected or reordered properties: {extra or names}")

    need = count * len(names) * 4
    payload = data[body:]
    if len(payload) < need:
        raise LengthError(f"payload has {len(payload)} bytes, header implies {need}")
    table = np.frombuffer(payload[:need], dtype="<f4").reshape(count, len(names)).astype(np.float64)

    k = sh_count(degree)
    rest = 3 * (k - 1)
    sh = np.empty((count, k, 3))
    sh[:, 0, :] = table[:, 6:9]
    sh[:, 1:, :] = table[:, 9 : 9 + rest].reshape(count, 3, k - 1).transpose(0, 2, 1)
    o = 9 + rest
    return GaussianScene(
        table[:, 0:3].copy(),
        table[:, o + 4 : o + 8].copy(),
        table[:, o + 1 : o + 4].copy(),
        table[:, o].copy(),
        sh,
        degree,
    )


def load_scene(path) -> GaussianScene:
    return scene_from_bytes(Path(path).read_bytes())


def load_point_cloud(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read xyz (and optional red/green/blue uchar) from a simple binary or ASCII PLY."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise FormatError("not a PLY file")
    end = data.find(b"end_header\n")
    if end < 0:
        raise FormatError("PLY header has no end_header line")
    body = data[end + len(b"end_header\n") :]
    fmt, count, props = None, None, []
    for raw in data[:end].decode("ascii", errors="replace").splitlines()[1:]:
        parts = raw.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element" and parts[1] == "vertex":
            count = int(parts[2])
        elif parts[0] == "element":
            break
        elif parts[0] == "property" and count is not None:
            props.append((parts[2], parts[1]))
    if count is None:
        raise FormatError("PLY header has no vertex element")
    names = [p for p, _ in props]
    for axis in "xyz":
        if axis not in names:
            raise FormatError(f"missing property {axis!r}")
    types = {"float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
             "uchar": "u1", "uint8": "u1", "int": "i4", "int32": "i4"}
    try:
        if fmt == "ascii":
            rows = body.decode("ascii").split()
            table = np.array(rows[: count * len(props)], dtype=np.float64).reshape(count, len(props))
            cols = {n: table[:, i] for i, n in enumerate(names)}
        elif fmt == "binary_little_endian":
            dtype = np.dtype([(n, "<" + types[t]) for n, t in props])
            if len(body) < count * dtype.itemsize:
                raise LengthError("point cloud payload is truncated")
            rec = np.frombuffer(body[: count * dtype.itemsize], dtype=dtype)
            cols = {n: rec[n].astype(np.float64) for n in names}
        else:
            raise FormatError(f"unsupported PLY format {fmt!r}")
    except KeyError as exc:
        raise FormatError(f"unsupported property type {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise LengthError(f"point cloud payload is malformed: {exc}") from exc
    points = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    colors = None
    if all(c in cols for c in ("red", "green", "blue")):
        colors = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1) / 255.0
    return points, colors
