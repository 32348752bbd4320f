"""2D triangular mesh in the image plane.

Vertices are tracked landmarks (optionally carrying a triangulated inverse
depth ``z``) and Steiner points laid on a regular grid. The mesh is stored as
flat numpy arrays; edges are the unique triangle sides, directed from the
lower vertex index to the higher one.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import DegenerateError

logger = logging.getLogger(__name__)

# Points closer than this (pixels) are merged into one vertex.
MERGE_RADIUS = 0.5


@dataclass(frozen=True)
class Landmark:
    """A tracked image point, with optional inverse depth ``z`` (1/m)."""

    u: tuple[float, float]
    z: Optional[float] = None

    def __post_init__(self):
        if self.z is not None and not (np.isfinite(self.z) and self.z > 0):
            raise ValueError(f"landmark inverse depth must be finite and > 0, got {self.z}")


@dataclass(frozen=True)
class VertexState:
    u: tuple[float, float]
    xi: float
    w: tuple[float, float]
    z: Optional[float]
    is_steiner: bool


@dataclass(frozen=True)
class Edge:
    """Directed edge ``i -> j`` with NLTGV weights ``alpha`` (1/px) and ``beta``."""

    i: int
    j: int
    alpha: float
    beta: float = 1.0


def _sides(triangles: np.ndarray) -> np.ndarray:
    """Unique undirected sides of ``triangles`` as sorted (lo, hi) rows."""
    if len(triangles) == 0:
        return np.empty((0, 2), dtype=np.int64)
    sides = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    sides = np.sort(sides, axis=1)
    return np.unique(sides, axis=0)


def _adjacency(edges: np.ndarray, n_vertices: int, column: int) -> tuple[np.ndarray, ...]:
    order = np.argsort(edges[:, column], kind="stable")
    counts = np.bincount(edges[:, column], minlength=n_vertices)
    return tuple(np.split(order, np.cumsum(counts)[:-1]))


def signed_areas(uv: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Twice the signed area of every triangle (positive = counter-clockwise)."""
    a = uv[triangles[:, 0]]
    b = uv[triangles[:, 1]]
    c = uv[triangles[:, 2]]
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


@dataclass
class Mesh2D:
    """Image-plane triangulation plus the per-vertex primal state.

    Attributes:
        uv: (N, 2) pixel coordinates ``(u1, u2)``.
        triangles: (T, 3) vertex indices, counter-clockwise in ``(u1, u2)``.
        edges: (E, 2) directed edges ``(i, j)`` with ``i < j``.
        alpha: (E,) edge weights, ``1 / |u_i - u_j|``.
        beta: (E,) edge weights, all ones.
        z: (N,) landmark inverse depth, NaN where absent.
        is_steiner: (N,) True for grid/corner vertices.
        xi: (N,) inverse depth per vertex.
        w: (N, 2) inverse-depth gradient per vertex (1/m per pixel).
        out_edges / in_edges: per-vertex indices of edges leaving / entering it.

    Geometry and topology are meant to be treated as immutable once built;
    use :meth:`with_state` to get a mesh carrying a different ``(xi, w)``.
    """

    uv: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    z: np.ndarray
    is_steiner: np.ndarray
    xi: np.ndarray
    w: np.ndarray
    out_edges: tuple[np.ndarray, ...] = field(repr=False)
    in_edges: tuple[np.ndarray, ...] = field(repr=False)

    @classmethod
    def from_triangles(
        cls,
        uv,
        triangles,
        z=None,
        is_steiner=None,
        edges=None,
    ) -> "Mesh2D":
        """Build a mesh from vertex positions and triangles.

        Edges default to the unique triangle sides. ``edges`` can be passed to
        build edge-only graphs (no faces), which the small test instances use.
        """
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        n = len(uv)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= n):
            raise IndexError("triangle references a missing vertex")
        if len(triangles):
            areas = signed_areas(uv, triangles)
            if np.any(areas == 0):
                raise DegenerateError("degenerate triangle (zero area)")
            flip = areas < 0
            triangles = triangles.copy()
            triangles[flip] = triangles[flip][:, [0, 2, 1]]
        if edges is None:
            edges = _sides(triangles)
        else:
            edges = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
            if np.any(edges[:, 0] == edges[:, 1]):
                raise DegenerateError("degenerate edge (i == j)")
            if len(np.unique(edges, axis=0)) != len(edges):
                raise ValueError("duplicate edge")
            edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
        if z is None:
            z = np.full(n, np.nan)
        z = np.asarray(z, dtype=np.float64).reshape(n)
        present = ~np.isnan(z)
        if np.any(z[present] <= 0) or np.any(~np.isfinite(z[present])):
            raise ValueError("landmark inverse depth must be finite and > 0")
        if is_steiner is None:
            is_steiner = np.zeros(n, dtype=bool)
        mesh = cls(
            uv=uv,
            triangles=triangles,
            edges=edges,
            alpha=np.zeros(len(edges)),
            beta=np.ones(len(edges)),
            z=z,
            is_steiner=np.asarray(is_steiner, dtype=bool).reshape(n),
            xi=np.ones(n),
            w=np.zeros((n, 2)),
            out_edges=_adjacency(edges, n, 0),
            in_edges=_adjacency(edges, n, 1),
        )
        return edge_weights(mesh)

    @property
    def n_vertices(self) -> int:
        return len(self.uv)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def has_z(self) -> np.ndarray:
        return ~np.isnan(self.z)

    @property
    def vertices(self) -> list[VertexState]:
        return [
            VertexState(
                u=(float(self.uv[k, 0]), float(self.uv[k, 1])),
                xi=float(self.xi[k]),
                w=(float(self.w[k, 0]), float(self.w[k, 1])),
                z=None if np.isnan(self.z[k]) else float(self.z[k]),
                is_steiner=bool(self.is_steiner[k]),
            )
            for k in range(self.n_vertices)
        ]

    def edge(self, k: int) -> Edge:
        i, j = self.edges[k]
        return Edge(int(i), int(j), float(self.alpha[k]), float(self.beta[k]))

    def with_state(self, xi=None, w=None) -> "Mesh2D":
        """Copy of the mesh with a new primal state (geometry is shared)."""
        xi = self.xi if xi is None else np.asarray(xi, dtype=np.float64).reshape(self.n_vertices)
        w = self.w if w is None else np.asarray(w, dtype=np.float64).reshape(self.n_vertices, 2)
        return dataclasses.replace(self, xi=xi.copy(), w=w.copy())

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles


def edge_weights(mesh: Mesh2D) -> Mesh2D:
    """Set ``alpha = 1/|u_i - u_j|`` and ``beta = 1`` on every edge."""
    d = mesh.uv[mesh.edges[:, 1]] - mesh.uv[mesh.edges[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    if np.any(length == 0):
        k = int(np.flatnonzero(length == 0)[0])
        raise DegenerateError(f"degenerate edge {k}: zero length")
    return dataclasses.replace(mesh, alpha=1.0 / length, beta=np.ones(len(length)))


def steiner_grid(width: int, height: int, spacing: Optional[float]) -> np.ndarray:
    """Steiner points: a regular grid every ``spacing`` px plus the last row/column.

    With ``spacing=None`` only the four image corners are returned. Either way
    the convex hull of the result is the full image rectangle.
    """
    if spacing is None:
        xs = np.array([0.0, width - 1.0])
        ys = np.array([0.0, height - 1.0])
    else:
        xs = np.union1d(np.arange(0, width - 1, spacing, dtype=np.float64), [width - 1.0])
        ys = np.union1d(np.arange(0, height - 1, spacing, dtype=np.float64), [height - 1.0])
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _as_landmarks(points: Iterable) -> list[Landmark]:
    out = []
    for p in points:
        if isinstance(p, Landmark):
            out.append(p)
            continue
        p = tuple(p)
        z = p[2] if len(p) > 2 else None
        if z is not None and np.isnan(z):
            z = None
        out.append(Landmark((float(p[0]), float(p[1])), None if z is None else float(z)))
    return out


def triangulate(
    points: Sequence,
    image_size: tuple[int, int],
    steiner_spacing: Optional[float] = None,
) -> Mesh2D:
    """Delaunay-triangulate landmarks plus Steiner points over an image.

    Args:
        points: landmarks, either :class:`Landmark` or ``(u1, u2[, z])`` tuples.
        image_size: ``(W, H)`` in pixels.
        steiner_spacing: grid spacing in pixels, or None for corners only.

    Returns:
        The mesh, with landmarks first (in input order, after merging) and
        Steiner points after them. Points within 0.5 px of an earlier one are
        dropped, except that a landmark always replaces a Steiner point. A
        landmark that replaces an image corner is moved onto the corner so
        the mesh still spans the whole image.
    """
    width, height = (int(s) for s in image_size)
    if width < 2 or height < 2:
        raise ValueError(f"image must be at least 2x2, got {width}x{height}")
    if steiner_spacing is not None and steiner_spacing < 2:
        raise ValueError(f"steiner spacing must be >= 2 px, got {steiner_spacing}")

    landmarks = _as_landmarks(points)
    lm_uv = np.array([lm.u for lm in landmarks], dtype=np.float64).reshape(-1, 2)
    if len(lm_uv):
        inside = (
            (lm_uv[:, 0] >= 0)
            & (lm_uv[:, 0] <= width - 1)
            & (lm_uv[:, 1] >= 0)
            & (lm_uv[:, 1] <= height - 1)
        )
        if not inside.all():
            k = int(np.flatnonzero(~inside)[0])
            raise ValueError(f"landmark {k} at {tuple(lm_uv[k].tolist())} is outside the image")

    # landmarks first, so the first-come merge rule below keeps them over Steiner points
    steiner = steiner_grid(width, height, steiner_spacing)
    all_uv = np.concatenate([lm_uv, steiner])
    all_z = np.array([np.nan if lm.z is None else lm.z for lm in landmarks] + [np.nan] * len(steiner))
    all_steiner = np.concatenate([np.zeros(len(lm_uv), bool), np.ones(len(steiner), bool)])

    keep = np.ones(len(all_uv), dtype=bool)
    pairs = cKDTree(all_uv).query_pairs(MERGE_RADIUS, output_type="ndarray")
    if len(pairs):
        # drop the later point of each close pair; processed in index order
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        corners = {
            len(lm_uv) + k
            for k, p in enumerate(steiner)
            if p[0] in (0, width - 1) and p[1] in (0, height - 1)
        }
        all_uv = all_uv.copy()
        snapped = set()
        for a, b in pairs:
            if keep[a] and keep[b]:
                if b in corners:
                    if a in snapped:
                        continue
                    # the corners span the image; the surviving landmark takes
                    # the corner's position (moves < 0.5 px) so coverage holds
                    all_uv[a] = all_uv[b]
                    snapped.add(a)
                keep[b] = False
    n_merged = int((~keep).sum())
    if n_merged:
        logger.debug("merged %d near-duplicate points", n_merged)
    uv, z, is_steiner = all_uv[keep], all_z[keep], all_steiner[keep]

    if len(uv) < 3:
        raise DegenerateError("degenerate point set")
    centered = uv - uv.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9 * max(width, height)) < 2:
        raise DegenerateError("degenerate point set")

    tri = Delaunay(uv)
    if len(tri.coplanar):
        raise DegenerateError("degenerate point set: some points were not triangulated")
    simplices = tri.simplices.astype(np.int64)
    areas = signed_areas(uv, simplices)
    simplices = simplices[np.abs(areas) > 1e-12 * max(width, height) ** 2]
    # stable triangle order, independent of qhull internals
    simplices = np.sort(simplices, axis=1)
    simplices = simplices[np.lexsort(simplices.T[::-1])]
    mesh = Mesh2D.from_triangles(uv, simplices, z=z, is_steiner=is_steiner)
    if mesh.euler_characteristic() != 1:
        raise DegenerateError("triangulation is not a disk (Euler check failed)")
    return mesh
