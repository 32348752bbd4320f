"""Sparse barycentric interpolation from mesh vertices to image pixels.

Each valid pixel ``d`` gets one row ``a_d`` holding the barycentric weights of
its pixel center with respect to the triangle containing it, so that the
per-pixel inverse depth of the mesh is ``A @ xi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import UncoveredPixelError
from .mesh2d import Mesh2D

# Slack on barycentric weights when deciding whether a point is inside a triangle.
INSIDE_TOL = 1e-12


@dataclass
class DepthGrid:
    """H x W inverse-depth raster with an explicit validity mask.

    Values under an invalid mask entry are never read.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise ValueError("values and mask must be 2D arrays of the same shape")
        v = self.values[self.mask]
        if not (np.all(np.isfinite(v)) and np.all(v > 0)):
            raise ValueError("valid inverse depths must be finite and > 0")

    @classmethod
    def from_values(cls, values) -> "DepthGrid":
        """Mask out every non-finite or non-positive entry."""
        values = np.asarray(values, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            mask = np.isfinite(values) & (values > 0)
        return cls(np.where(mask, values, np.nan), mask)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def valid_values(self) -> np.ndarray:
        """Valid inverse depths in raster order (the vector ``b``)."""
        return self.values[self.mask]


@dataclass
class SparseInterpolator:
    """Row-sparse map ``A`` from vertex inverse depths to valid-pixel inverse depths.

    Rows are in raster order of the valid pixels. ``pixels`` holds the flat
    raster index ``u2 * W + u1`` of each row.
    """

    pixels: np.ndarray
    vertices: np.ndarray
    weights: np.ndarray
    triangles: np.ndarray
    n_vertices: int
    width: int
    height: int
    _matrix: Optional[sp.csr_matrix] = field(default=None, repr=False)
    _matrix_t: Optional[sp.csr_matrix] = field(default=None, repr=False)
    _normal: Optional[sp.csr_matrix] = field(default=None, repr=False)

    @property
    def n_valid_pixels(self) -> int:
        return len(self.pixels)

    @property
    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            n = self.n_valid_pixels
            self._matrix = sp.csr_matrix(
                (self.weights.ravel(), self.vertices.ravel(), np.arange(0, 3 * n + 1, 3)),
                shape=(n, self.n_vertices),
            )
        return self._matrix

    @property
    def matrix_t(self) -> sp.csr_matrix:
        if self._matrix_t is None:
            self._matrix_t = self.matrix.T.tocsr()
        return self._matrix_t

    @property
    def normal_matrix(self) -> sp.csr_matrix:
        """``A^T A`` (vertex x vertex)."""
        if self._normal is None:
            self._normal = (self.matrix_t @ self.matrix).tocsr()
        return self._normal

    def pixel_coords(self) -> np.ndarray:
        """(n, 2) pixel coordinates ``(u1, u2)`` of the rows."""
        return np.column_stack([self.pixels % self.width, self.pixels // self.width]).astype(float)


def _barycentric(uv: np.ndarray, tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
    a, b, c = uv[tri[0]], uv[tri[1]], uv[tri[2]]
    area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    x, y = pts[:, 0], pts[:, 1]
    wa = ((b[0] - x) * (c[1] - y) - (b[1] - y) * (c[0] - x)) / area2
    wb = ((c[0] - x) * (a[1] - y) - (c[1] - y) * (a[0] - x)) / area2
    wc = ((a[0] - x) * (b[1] - y) - (a[1] - y) * (b[0] - x)) / area2
    return np.column_stack([wa, wb, wc])


def _clean(weights: np.ndarray) -> np.ndarray:
    weights = np.maximum(weights, 0.0)
    return weights / weights.sum(axis=1, keepdims=True)


def locate(mesh: Mesh2D, pixel) -> tuple[int, np.ndarray]:
    """Containing triangle and barycentric weights of a point.

    Points on shared edges or vertices go to the lowest-index triangle.
    """
    pt = np.asarray(pixel, dtype=np.float64).reshape(1, 2)
    for t, tri in enumerate(mesh.triangles):
        w = _barycentric(mesh.uv, tri, pt)[0]
        if np.all(w >= -INSIDE_TOL):
            return t, _clean(w[None])[0]
    raise UncoveredPixelError(f"uncovered pixel {tuple(pt[0].tolist())}")


def _rasterize(mesh: Mesh2D, width: int, height: int, mask: Optional[np.ndarray]):
    """Assign every (masked) pixel center to its lowest-index containing triangle."""
    owner = np.full(height * width, -1, dtype=np.int64)
    weights = np.zeros((height * width, 3))
    wanted = np.ones(height * width, bool) if mask is None else mask.ravel().copy()
    uv = mesh.uv
    for t, tri in enumerate(mesh.triangles):
        pts = uv[tri]
        x0 = max(int(np.ceil(pts[:, 0].min())), 0)
        x1 = min(int(np.floor(pts[:, 0].max())), width - 1)
        y0 = max(int(np.ceil(pts[:, 1].min())), 0)
        y1 = min(int(np.floor(pts[:, 1].max())), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1)
        ys = np.arange(y0, y1 + 1)
        idx = (ys[:, None] * width + xs[None, :]).ravel()
        free = wanted[idx]
        if not free.any():
            continue
        idx = idx[free]
        coords = np.column_stack([idx % width, idx // width]).astype(np.float64)
        w = _barycentric(uv, tri, coords)
        inside = np.all(w >= -INSIDE_TOL, axis=1)
        idx = idx[inside]
        owner[idx] = t
        weights[idx] = _clean(w[inside])
        wanted[idx] = False
    return owner, weights


def build_interpolator(mesh: Mesh2D, grid: DepthGrid) -> SparseInterpolator:
    """One barycentric row per valid pixel of ``grid``, in raster order."""
    owner, weights = _rasterize(mesh, grid.width, grid.height, grid.mask)
    pixels = np.flatnonzero(grid.mask.ravel())
    missing = owner[pixels] < 0
    if missing.any():
        k = int(pixels[np.flatnonzero(missing)[0]])
        raise UncoveredPixelError(f"uncovered pixel ({k % grid.width}, {k // grid.width})")
    tri = owner[pixels]
    return SparseInterpolator(
        pixels=pixels,
        vertices=mesh.triangles[tri].reshape(-1, 3) if len(tri) else np.empty((0, 3), np.int64),
        weights=weights[pixels],
        triangles=tri,
        n_vertices=mesh.n_vertices,
        width=grid.width,
        height=grid.height,
    )


def apply(A: SparseInterpolator, v_xi) -> np.ndarray:
    """Per-pixel inverse depth ``A @ v_xi`` over the valid pixels."""
    v_xi = np.asarray(v_xi, dtype=np.float64)
    if v_xi.shape != (A.n_vertices,):
        raise ValueError(f"expected {A.n_vertices} vertex values, got shape {v_xi.shape}")
    return A.matrix @ v_xi


def apply_adjoint(A: SparseInterpolator, p) -> np.ndarray:
    """Per-vertex accumulation ``A^T @ p``."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (A.n_valid_pixels,):
        raise ValueError(f"expected {A.n_valid_pixels} pixel values, got shape {p.shape}")
    return A.matrix_t @ p


def render(mesh: Mesh2D, width: int, height: int, xi=None) -> np.ndarray:
    """Full-image interpolated inverse depth; NaN where no triangle covers a pixel."""
    xi = mesh.xi if xi is None else np.asarray(xi, dtype=np.float64)
    owner, weights = _rasterize(mesh, width, height, None)
    out = np.full(height * width, np.nan)
    hit = owner >= 0
    out[hit] = np.einsum("ij,ij->i", weights[hit], xi[mesh.triangles[owner[hit]]])
    return out.reshape(height, width)
