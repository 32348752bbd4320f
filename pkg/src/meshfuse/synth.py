"""Synthetic piecewise-affine (or curved) scenes and a grid-search oracle.

Random draws come from numpy's PCG64 seeded through ``SeedSequence(seed)``.
The sequence is split with ``spawn(4)`` into independent substreams, used in
this order: pixel noise, outlier positions and values, invalid-pixel
positions, landmark jitter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .barycentric import DepthGrid, SparseInterpolator
from .mesh2d import Landmark, Mesh2D
from .pdsolver import energy

REGION_KINDS = ("all", "rect", "halfplane_ge", "halfplane_lt")


@dataclass(frozen=True)
class Region:
    """Pixel region of one plane.

    kinds and params:
        all: ()
        rect: (x0, y0, x1, y1), half-open ``x0 <= u1 < x1``, ``y0 <= u2 < y1``
        halfplane_ge: (n1, n2, c), ``n1 u1 + n2 u2 >= c``
        halfplane_lt: (n1, n2, c), ``n1 u1 + n2 u2 < c``
    """

    kind: str = "all"
    params: tuple[float, ...] = ()

    def __post_init__(self):
        want = {"all": 0, "rect": 4, "halfplane_ge": 3, "halfplane_lt": 3}
        if self.kind not in want:
            raise ValueError(f"unknown region kind {self.kind!r}")
        if len(self.params) != want[self.kind]:
            raise ValueError(f"region {self.kind} takes {want[self.kind]} parameters")

    def contains(self, u1, u2) -> np.ndarray:
        u1, u2 = np.asarray(u1, float), np.asarray(u2, float)
        if self.kind == "all":
            return np.ones(np.broadcast(u1, u2).shape, bool)
        if self.kind == "rect":
            x0, y0, x1, y1 = self.params
            return (u1 >= x0) & (u1 < x1) & (u2 >= y0) & (u2 < y1)
        n1, n2, c = self.params
        s = n1 * u1 + n2 * u2
        return s >= c if self.kind == "halfplane_ge" else s < c


@dataclass(frozen=True)
class Plane:
    """``xi(u) = a u1 + b u2 + c + d u1^2 + e u2^2 + f u1 u2`` over ``region``.

    The quadratic coefficients default to zero (a true plane in inverse depth).
    """

    region: Region
    coeffs: tuple[float, float, float]
    quad: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def value(self, u1, u2) -> np.ndarray:
        a, b, c = self.coeffs
        d, e, f = self.quad
        u1, u2 = np.asarray(u1, float), np.asarray(u2, float)
        return a * u1 + b * u2 + c + d * u1 * u1 + e * u2 * u2 + f * u1 * u2


@dataclass
class SceneSpec:
    width: int
    height: int
    planes: list[Plane]
    noise_sigma: float = 0.0
    outlier_frac: float = 0.0
    outlier_range: tuple[float, float] = (0.05, 2.0)
    invalid_frac: float = 0.0
    seed: int = 0
    landmark_spacing: Optional[float] = 40.0
    landmark_jitter: float = 5.0

    def validate(self) -> None:
        if self.width < 2 or self.height < 2:
            raise ValueError("scene must be at least 2x2")
        if not self.planes:
            raise ValueError("scene needs at least one plane")
        for name in ("outlier_frac", "invalid_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        lo, hi = self.outlier_range
        if not lo < hi:
            raise ValueError("outlier_range needs lo < hi")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.landmark_spacing is not None and self.landmark_spacing <= 0:
            raise ValueError("landmark_spacing must be > 0")


@dataclass
class SyntheticScene:
    observed: DepthGrid
    truth: DepthGrid
    landmarks: list[Landmark]
    inliers: np.ndarray = field(repr=False)


def _field(spec: SceneSpec, u1, u2) -> np.ndarray:
    """Ground-truth inverse depth at (possibly subpixel) positions."""
    u1, u2 = np.broadcast_arrays(np.asarray(u1, float), np.asarray(u2, float))
    out = np.full(u1.shape, np.nan)
    hits = np.zeros(u1.shape, int)
    for plane in spec.planes:
        inside = plane.region.contains(u1, u2)
        hits += inside
        out = np.where(inside, plane.value(u1, u2), out)
    if np.any(hits != 1):
        raise ValueError("scene regions must partition the image (every pixel in exactly one)")
    return out


def truth_field(spec: SceneSpec) -> np.ndarray:
    spec.validate()
    v, u = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
    xi = _field(spec, u, v)
    if not np.all(xi > 0):
        raise ValueError("scene produces non-positive inverse depth")
    return xi


def generate(spec: SceneSpec) -> SyntheticScene:
    """Observed and ground-truth grids plus landmarks; deterministic in ``spec.seed``."""
    xi = truth_field(spec)
    h, w = xi.shape
    n = h * w
    noise_ss, outlier_ss, invalid_ss, landmark_ss = np.random.SeedSequence(spec.seed).spawn(4)

    observed = xi.copy()
    if spec.noise_sigma > 0:
        observed += np.random.default_rng(noise_ss).normal(0.0, spec.noise_sigma, size=(h, w))

    inliers = np.ones(n, bool)
    n_out = int(round(spec.outlier_frac * n))
    if n_out:
        rng = np.random.default_rng(outlier_ss)
        idx = rng.permutation(n)[:n_out]
        flat = observed.ravel()
        flat[idx] = rng.uniform(*spec.outlier_range, size=n_out)
        inliers[idx] = False

    valid = np.ones(n, bool)
    n_bad = int(round(spec.invalid_frac * n))
    if n_bad:
        valid[np.random.default_rng(invalid_ss).permutation(n)[:n_bad]] = False
    valid &= observed.ravel() > 0
    valid = valid.reshape(h, w)
    inliers = inliers.reshape(h, w) & valid

    landmarks = []
    if spec.landmark_spacing is not None:
        s = spec.landmark_spacing
        gx, gy = np.meshgrid(np.arange(s / 2, w - 1, s), np.arange(s / 2, h - 1, s))
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        if len(pts):
            rng = np.random.default_rng(landmark_ss)
            pts = pts + rng.uniform(-spec.landmark_jitter, spec.landmark_jitter, size=pts.shape)
            pts[:, 0] = np.clip(pts[:, 0], 0, w - 1)
            pts[:, 1] = np.clip(pts[:, 1], 0, h - 1)
            z = _field(spec, pts[:, 0], pts[:, 1])
            landmarks = [Landmark((float(x), float(y)), float(zz)) for (x, y), zz in zip(pts, z)]

    return SyntheticScene(
        observed=DepthGrid(np.where(valid, observed, np.nan), valid),
        truth=DepthGrid(xi, np.ones_like(valid)),
        landmarks=landmarks,
        inliers=inliers,
    )


def plane_scene(width: int = 64, height: int = 64, coeffs=(0.002, 0.001, 0.4), **kw) -> SceneSpec:
    """Single plane over the whole image."""
    return SceneSpec(width, height, [Plane(Region("all"), tuple(coeffs))], **kw)


def two_plane_scene(width: int = 128, height: int = 128, **kw) -> SceneSpec:
    """A tilted wall and a floor-like plane split along a slanted line."""
    split = (1.0, 0.4, 0.6 * width)
    return SceneSpec(
        width,
        height,
        [
            Plane(Region("halfplane_lt", split), (0.003, 0.0, 0.35)),
            Plane(Region("halfplane_ge", split), (-0.001, 0.004, 0.45)),
        ],
        **kw,
    )


def curved_scene(width: int = 320, height: int = 240, curvature: float = 4.0, **kw) -> SceneSpec:
    """Paraboloid of inverse depth: ``0.3 + curvature * r^2`` with ``r`` in image widths."""
    cx, cy = (width - 1) / 2, (height - 1) / 2
    k = curvature / float(width) ** 2
    # k((u1-cx)^2 + (u2-cy)^2) + 0.3 expanded into the plane polynomial
    coeffs = (-2 * k * cx, -2 * k * cy, 0.3 + k * (cx * cx + cy * cy))
    return SceneSpec(width, height, [Plane(Region("all"), coeffs, (k, k, 0.0))], **kw)


# -- grid-search oracle -------------------------------------------------------


def _linear_terms(mesh: Mesh2D, A: SparseInterpolator, b, lam: float):
    """Energy with ``w`` fixed as ``const + sum_k c_k |G_k xi - r_k|``."""
    n = mesh.n_vertices
    rows, offs, coefs = [], [], []
    for k in range(mesh.n_edges):
        i, j = mesh.edges[k]
        g = np.zeros(n)
        g[i], g[j] = mesh.alpha[k], -mesh.alpha[k]
        rows.append(g)
        offs.append(mesh.alpha[k] * float(mesh.w[i] @ (mesh.uv[i] - mesh.uv[j])))
        coefs.append(1.0)
    dense = A.matrix.toarray() if A.n_valid_pixels else np.zeros((0, n))
    for d in range(A.n_valid_pixels):
        rows.append(dense[d])
        offs.append(b[d])
        coefs.append(lam)
    for v in np.flatnonzero(mesh.has_z):
        g = np.zeros(n)
        g[v] = 1.0
        rows.append(g)
        offs.append(mesh.z[v])
        coefs.append(lam)
    const = float(np.abs(mesh.beta[:, None] * (mesh.w[mesh.edges[:, 0]] - mesh.w[mesh.edges[:, 1]])).sum())
    G = np.array(rows).reshape(-1, n)
    return G, np.array(offs), np.array(coefs), const


def _term_energy(G, r, c, X) -> np.ndarray:
    """Energy (without constant) at each row of ``X`` (m, n)."""
    return np.abs(X @ G.T - r) @ c


def _best_last_coordinate(G, r, c, head: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Exact grid minimizer of the last coordinate for each fixed ``head`` row.

    The energy is convex and piecewise linear in the last coordinate, so its
    continuous minimizer is a weighted median of the kink locations, and the
    best grid point is one of the two grid nodes around it.
    """
    g_last = G[:, -1]
    dep = g_last != 0
    m = len(head)
    if not dep.any():
        return np.zeros(m, dtype=np.int64)
    off = head @ G[dep, :-1].T - r[dep]  # (m, K)
    t = -off / g_last[dep]
    wts = np.broadcast_to(c[dep] * np.abs(g_last[dep]), t.shape)
    order = np.argsort(t, axis=1, kind="stable")
    ts = np.take_along_axis(t, order, axis=1)
    cw = np.cumsum(np.take_along_axis(wts, order, axis=1), axis=1)
    k = np.argmax(cw >= 0.5 * cw[:, -1:], axis=1)
    tstar = ts[np.arange(m), k]
    step = grid[1] - grid[0] if len(grid) > 1 else 1.0
    lo_idx = np.clip(np.floor((tstar - grid[0]) / step).astype(np.int64), 0, len(grid) - 1)
    hi_idx = np.clip(lo_idx + 1, 0, len(grid) - 1)
    e_lo = _term_energy(G, r, c, np.column_stack([head, grid[lo_idx]]))
    e_hi = _term_energy(G, r, c, np.column_stack([head, grid[hi_idx]]))
    return np.where(e_hi < e_lo, hi_idx, lo_idx)


def oracle_minimize(
    mesh: Mesh2D,
    A: SparseInterpolator,
    b,
    lam: float,
    lo: float = 0.1,
    hi: float = 2.0,
    step: float = 1e-3,
    chunk: int = 64,
) -> tuple[np.ndarray, float]:
    """Minimize the energy over the grid ``{lo, lo+step, ..., hi}^n`` with ``w`` fixed.

    At most three vertices are allowed. All combinations of the leading
    coordinates are enumerated; the last one is minimized exactly along the
    grid for each combination.

    Returns:
        ``(xi_star, energy_star)``, the energy recomputed with :func:`energy`.
    """
    n = mesh.n_vertices
    if n > 3:
        raise ValueError("oracle scale exceeded: at most 3 free variables")
    if n == 0:
        raise ValueError("nothing to minimize")
    b = np.asarray(b, dtype=np.float64)
    grid = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    G, r, c, _ = _linear_terms(mesh, A, b, lam)

    best_e, best_x = np.inf, None
    if n == 1:
        X = grid[:, None]
        e = _term_energy(G, r, c, X)
        k = int(np.argmin(e))
        best_x = X[k]
    else:
        for start in range(0, len(grid), chunk):
            block = grid[start : start + chunk]
            if n == 2:
                head = block[:, None]
            else:
                h1, h2 = np.meshgrid(block, grid, indexing="ij")
                head = np.column_stack([h1.ravel(), h2.ravel()])
            last = _best_last_coordinate(G, r, c, head, grid)
            X = np.column_stack([head, grid[last]])
            e = _term_energy(G, r, c, X)
            k = int(np.argmin(e))
            if e[k] < best_e:
                best_e, best_x = e[k], X[k]
    xi_star = np.asarray(best_x, dtype=np.float64).copy()
    return xi_star, energy(mesh, A, b, lam, xi=xi_star).total


def brute_force_minimize(mesh, A, b, lam, grid) -> tuple[np.ndarray, float]:
    """Plain enumeration of ``grid^n``; only for small grids (cross-checks)."""
    n = mesh.n_vertices
    G, r, c, _ = _linear_terms(mesh, A, np.asarray(b, float), lam)
    X = np.stack(np.meshgrid(*([grid] * n), indexing="ij"), axis=-1).reshape(-1, n)
    e = _term_energy(G, r, c, X)
    k = int(np.argmin(e))
    return X[k].copy(), energy(mesh, A, b, lam, xi=X[k]).total
