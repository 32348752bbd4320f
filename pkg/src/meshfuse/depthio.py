"""Readers and writers for depth maps, landmarks, meshes and config files.

Files hold metric depth; the in-memory grids hold inverse depth. Depth values
that are zero, negative or non-finite are read as invalid pixels.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .barycentric import DepthGrid
from .errors import FormatError
from .mesh2d import Landmark, Mesh2D

logger = logging.getLogger(__name__)

DEPTH_KINDS = ("pfm", "pgm16", "csv")
MESH_KINDS = ("obj", "ply")


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @classmethod
    def default(cls, width: int, height: int) -> "Intrinsics":
        """``f = max(W, H)`` and the principal point at the image center."""
        f = float(max(width, height))
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


# -- raw rasters ----------------------------------------------------------------


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens (``#`` comments skipped)
    and the offset just past the single whitespace byte that ends the last one."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError("malformed header: file ends early")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pfm(path) -> np.ndarray:
    """Single-channel PFM as a float32 (H, W) array, top row first."""
    data = Path(path).read_bytes()
    tokens, offset = _header_tokens(data, 4)
    if tokens[0] != b"Pf":
        raise FormatError(f"malformed header: expected single-channel 'Pf', got {tokens[0]!r}")
    try:
        width, height, scale = int(tokens[1]), int(tokens[2]), float(tokens[3])
    except ValueError as exc:
        raise FormatError(f"malformed header: {exc}") from None
    if width <= 0 or height <= 0 or scale == 0:
        raise FormatError("malformed header: bad dimensions or scale")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    n = width * height
    if len(data) - offset != 4 * n:
        raise FormatError(f"dimension mismatch: expected {4 * n} data bytes, found {len(data) - offset}")
    arr = np.frombuffer(data, dtype=dtype, count=n, offset=offset).reshape(height, width)
    # PFM scanlines go bottom to top
    return np.flipud(arr).astype(np.float32)


def write_pfm(path, array) -> None:
    """Write a 2D array as little-endian single-channel PFM."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("PFM writer takes a 2D array")
    height, width = arr.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(np.flipud(arr), dtype="<f4").tobytes())


def read_pgm16(path) -> np.ndarray:
    """Binary 16-bit PGM (big-endian samples) as a uint16 (H, W) array."""
    data = Path(path).read_bytes()
    tokens, offset = _header_tokens(data, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"malformed header: expected 'P5', got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise FormatError(f"malformed header: {exc}") from None
    if width <= 0 or height <= 0 or not 256 <= maxval <= 65535:
        raise FormatError("malformed header: need positive dimensions and 256 <= maxval <= 65535")
    n = width * height
    if len(data) - offset != 2 * n:
        raise FormatError(f"dimension mismatch: expected {2 * n} data bytes, found {len(data) - offset}")
    return np.frombuffer(data, dtype=">u2", count=n, offset=offset).reshape(height, width).astype(np.uint16)


def write_pgm16(path, array) -> None:
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise ValueError("PGM writer takes a 2D array")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 65535:
        raise ValueError("PGM16 samples must lie in [0, 65535]")
    height, width = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr, dtype=">u2").tobytes())


def pgm_scale_path(path) -> Path:
    """Sidecar file holding the PGM16 scale (meters per unit): ``<file>.scale``."""
    path = Path(path)
    return path.with_name(path.name + ".scale")


def read_csv_grid(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise FormatError(f"line {lineno}: not a comma-separated list of numbers") from None
    if not rows:
        raise FormatError("empty depth file")
    if len({len(r) for r in rows}) != 1:
        raise FormatError("dimension mismatch: rows have different lengths")
    return np.array(rows, dtype=np.float64)


def write_csv_grid(path, array) -> None:
    arr = np.asarray(array, dtype=np.float64)
    with open(path, "w") as f:
        for row in arr:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


# -- depth grids ----------------------------------------------------------------


def _infer_kind(path, kind: Optional[str]) -> str:
    if kind is None:
        suffix = Path(path).suffix.lower().lstrip(".")
        kind = {"pfm": "pfm", "pgm": "pgm16", "csv": "csv"}.get(suffix)
        if kind is None:
            raise FormatError(f"cannot infer depth format from {path!s}; pass kind explicitly")
    if kind not in DEPTH_KINDS:
        raise FormatError(f"unknown depth kind {kind!r}; expected one of {DEPTH_KINDS}")
    return kind


def depth_to_grid(depth) -> DepthGrid:
    """Metric depth (H, W) to an inverse-depth grid; bad depths become invalid."""
    depth = np.asarray(depth, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        valid = np.isfinite(depth) & (depth > 0)
        xi = np.where(valid, 1.0 / np.where(valid, depth, 1.0), np.nan)
    valid &= np.isfinite(xi) & (xi > 0)
    return DepthGrid(np.where(valid, xi, np.nan), valid)


def grid_to_depth(grid: DepthGrid, invalid: float = 0.0) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(grid.mask, 1.0 / np.where(grid.mask, grid.values, 1.0), invalid)


def read_depth(path, kind: Optional[str] = None, scale: Optional[float] = None) -> DepthGrid:
    """Read a metric depth map and return inverse depths with a validity mask.

    Args:
        path: file to read.
        kind: ``pfm``, ``pgm16`` or ``csv``; inferred from the extension if None.
        scale: meters per unit for PGM16. If None it is read from the
            ``<file>.scale`` sidecar, which must then exist.
    """
    kind = _infer_kind(path, kind)
    if kind == "pfm":
        depth = read_pfm(path).astype(np.float64)
    elif kind == "csv":
        depth = read_csv_grid(path)
    else:
        if scale is None:
            side = pgm_scale_path(path)
            if not side.exists():
                raise FormatError(f"PGM16 depth needs a scale: pass one or provide {side}")
            try:
                scale = float(side.read_text().strip())
            except ValueError:
                raise FormatError(f"malformed scale file {side}") from None
        if not scale > 0:
            raise FormatError("PGM16 scale must be > 0")
        depth = read_pgm16(path).astype(np.float64) * scale
    return depth_to_grid(depth)


def write_depth(path, grid: DepthGrid, kind: Optional[str] = None, scale: Optional[float] = None) -> None:
    """Write ``grid`` as metric depth. Invalid pixels are written as NaN (PFM) or 0."""
    kind = _infer_kind(path, kind)
    if kind == "pfm":
        write_pfm(path, grid_to_depth(grid, invalid=np.nan))
    elif kind == "csv":
        write_csv_grid(path, grid_to_depth(grid, invalid=0.0))
    else:
        if scale is None or not scale > 0:
            raise ValueError("PGM16 output needs a positive scale (meters per unit)")
        units = np.rint(grid_to_depth(grid) / scale)
        write_pgm16(path, np.clip(units, 0, 65535).astype(np.uint16))
        pgm_scale_path(path).write_text(f"{scale!r}\n")


# -- landmarks ------------------------------------------------------------------


def parse_landmarks(lines: Iterable[str]) -> tuple[list[Landmark], int]:
    """Parse ``u1,u2[,depth_m]`` records.

    Returns:
        The landmarks and the number of records rejected for a non-positive
        or non-finite depth. Blank lines and ``#`` comments are skipped.
    """
    out, rejected = [], 0
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3):
            raise FormatError(f"line {lineno}: expected 'u1,u2[,depth_m]'")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"line {lineno}: expected numbers") from None
        if not (math.isfinite(vals[0]) and math.isfinite(vals[1])):
            raise FormatError(f"line {lineno}: non-finite pixel coordinate")
        z = None
        if len(vals) == 3:
            if not (math.isfinite(vals[2]) and vals[2] > 0):
                rejected += 1
                continue
            z = 1.0 / vals[2]
        out.append(Landmark((vals[0], vals[1]), z))
    return out, rejected


def read_landmarks(path) -> list[Landmark]:
    with open(path) as f:
        landmarks, rejected = parse_landmarks(f)
    if rejected:
        logger.warning("%s: rejected %d landmark(s) with non-positive depth", path, rejected)
    return landmarks


def write_landmarks(path, landmarks: Iterable[Landmark]) -> None:
    with open(path, "w") as f:
        for lm in landmarks:
            u1, u2 = (float(c) for c in lm.u)
            if lm.z is None:
                f.write(f"{u1!r},{u2!r}\n")
            else:
                f.write(f"{u1!r},{u2!r},{1.0 / float(lm.z)!r}\n")


# -- meshes ---------------------------------------------------------------------


def back_project(mesh: Mesh2D, intrinsics: Intrinsics) -> np.ndarray:
    """Vertex positions in camera coordinates (meters), ``Z = 1 / xi``."""
    if np.any(~(mesh.xi > 0)):
        k = int(np.flatnonzero(~(mesh.xi > 0))[0])
        raise ValueError(f"vertex {k} has non-positive inverse depth {mesh.xi[k]}")
    Z = 1.0 / mesh.xi
    X = (mesh.uv[:, 0] - intrinsics.cx) / intrinsics.fx * Z
    Y = (mesh.uv[:, 1] - intrinsics.cy) / intrinsics.fy * Z
    return np.column_stack([X, Y, Z])


def project(points: np.ndarray, intrinsics: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates and inverse depth of camera-frame points."""
    points = np.asarray(points, dtype=np.float64)
    Z = points[:, 2]
    if np.any(~(Z > 0)):
        raise ValueError("points must lie in front of the camera")
    uv = np.column_stack(
        [points[:, 0] / Z * intrinsics.fx + intrinsics.cx, points[:, 1] / Z * intrinsics.fy + intrinsics.cy]
    )
    return uv, 1.0 / Z


def write_mesh(mesh: Mesh2D, intrinsics: Intrinsics, path, kind: Optional[str] = None) -> None:
    """Back-project the mesh and write it as ASCII OBJ or binary little-endian PLY."""
    kind = kind or Path(path).suffix.lower().lstrip(".")
    if kind not in MESH_KINDS:
        raise FormatError(f"unknown mesh kind {kind!r}; expected one of {MESH_KINDS}")
    xyz = back_project(mesh, intrinsics)
    faces = mesh.triangles
    if kind == "obj":
        with open(path, "w") as f:
            for x, y, z in xyz.tolist():
                f.write(f"v {x!r} {y!r} {z!r}\n")
            for a, b, c in faces:
                f.write(f"f {a + 1} {b + 1} {c + 1}\n")
        return
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(xyz)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(faces)}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    face_rec = np.zeros(len(faces), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    face_rec["n"] = 3
    face_rec["idx"] = faces
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(xyz.astype("<f4").tobytes())
        f.write(face_rec.tobytes())


def _read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(p) for p in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    if len(idx) != 3:
                        raise FormatError(f"line {lineno}: only triangles are supported")
                    faces.append([i - 1 for i in idx])
            except ValueError:
                raise FormatError(f"line {lineno}: malformed record") from None
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    verts = np.array(verts, dtype=np.float64).reshape(-1, 3)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
        raise FormatError("face references a missing vertex")
    return verts, faces


def _read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError("malformed PLY header")
    header = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FormatError("only binary little-endian PLY is supported")
    counts = dict(re.findall(r"element (\w+) (\d+)", "\n".join(header)))
    nv, nf = int(counts.get("vertex", 0)), int(counts.get("face", 0))
    offset = end + len(b"end_header\n")
    face_dt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    if len(data) - offset != 12 * nv + face_dt.itemsize * nf:
        raise FormatError("dimension mismatch in PLY body")
    verts = np.frombuffer(data, dtype="<f4", count=3 * nv, offset=offset).reshape(nv, 3)
    recs = np.frombuffer(data, dtype=face_dt, count=nf, offset=offset + 12 * nv)
    if np.any(recs["n"] != 3):
        raise FormatError("only triangles are supported")
    return verts.astype(np.float32), recs["idx"].astype(np.int64)


def read_mesh(path, kind: Optional[str] = None) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (N, 3) and faces (T, 3) of an OBJ or PLY file written by :func:`write_mesh`."""
    kind = kind or Path(path).suffix.lower().lstrip(".")
    if kind == "obj":
        return _read_obj(path)
    if kind == "ply":
        return _read_ply(path)
    raise FormatError(f"unknown mesh kind {kind!r}; expected one of {MESH_KINDS}")


FRAME_SNAP = 1e-3


def mesh_from_points(vertices, faces, intrinsics: Intrinsics, frame=None) -> Mesh2D:
    """Image-plane mesh (with ``xi`` set) from back-projected vertices.

    Args:
        vertices: (N, 3) camera-frame points.
        faces: (F, 3) vertex indices.
        intrinsics: Pinhole model used for the projection.
        frame: Optional ``(width, height)``. Coordinates within ``FRAME_SNAP``
            px of the image border are snapped onto it, so that float32 files
            (PLY) still cover the border pixels.
    """
    uv, xi = project(vertices, intrinsics)
    if frame is not None:
        for k, edge in enumerate((frame[0] - 1.0, frame[1] - 1.0)):
            col = uv[:, k]
            col[np.abs(col) <= FRAME_SNAP] = 0.0
            col[np.abs(col - edge) <= FRAME_SNAP] = edge
    mesh = Mesh2D.from_triangles(uv, faces)
    return mesh.with_state(xi=xi)


# -- config files -----------------------------------------------------------------


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


def format_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())

