"""Random problem instances shared by the test modules."""

from __future__ import annotations

import numpy as np

from meshfuse import DepthGrid, Mesh2D, build_interpolator, triangulate
from meshfuse.barycentric import SparseInterpolator
from meshfuse.synth import generate, plane_scene


def random_mesh(rng: np.random.Generator, max_vertices: int = 30, max_side: int = 32):
    """Triangulated random landmarks (some with z) over a small image.

    Returns:
        ``(mesh, width, height)`` with at most ``max_vertices`` vertices.
    """
    while True:
        w, h = (int(v) for v in rng.integers(4, max_side + 1, 2))
        n = int(rng.integers(0, max_vertices - 3))
        pts = [
            (rng.uniform(0, w - 1), rng.uniform(0, h - 1), rng.uniform(0.3, 1.5) if rng.random() < 0.5 else None)
            for _ in range(n)
        ]
        mesh = triangulate(pts, (w, h), None)
        if mesh.n_vertices <= max_vertices:
            xi = rng.uniform(0.2, 2.0, mesh.n_vertices)
            wv = rng.normal(0.0, 0.05, (mesh.n_vertices, 2))
            return mesh.with_state(xi, wv), w, h


def random_grid(rng: np.random.Generator, width: int, height: int, invalid: float = 0.3) -> DepthGrid:
    values = rng.uniform(0.2, 2.0, (height, width))
    mask = rng.random((height, width)) >= invalid
    return DepthGrid(np.where(mask, values, np.nan), mask)


def noisy_instance(seed: int):
    """Noisy single-plane scene with 10% outliers on a random landmark mesh."""
    rng = np.random.default_rng(seed)
    w, h = (int(v) for v in rng.integers(8, 33, 2))
    n = int(rng.integers(3, 20))
    pts = [
        (rng.uniform(0, w - 1), rng.uniform(0, h - 1), rng.uniform(0.3, 1.5) if rng.random() < 0.5 else None)
        for _ in range(n)
    ]
    spec = plane_scene(
        w, h, coeffs=(rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01), 0.6),
        noise_sigma=0.01, outlier_frac=0.1, seed=seed, landmark_spacing=None,
    )
    scene = generate(spec)
    mesh = triangulate(pts, (w, h), rng.choice([None, 8.0, 16.0]))
    return mesh, scene.observed


def oracle_instance(seed: int):
    """At most three free inverse depths with w frozen at zero.

    Three vertices form one triangle over a 4x4 grid (pixels with
    ``u1 + u2 <= 3``); two vertices are joined by a single edge; one vertex
    has no edges. The two smaller cases use hand-built interpolator rows.
    Each vertex carries a landmark depth with probability 1/2.

    Returns:
        ``(mesh, A, grid, lam)``.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    if n == 3:
        uv, tris, edges = [(0, 0), (3, 0), (0, 3)], [(0, 1, 2)], None
    elif n == 2:
        uv, tris, edges = [(0, 0), (3, 1)], [], [(0, 1)]
    else:
        uv, tris, edges = [(1, 1)], [], []
    z = np.where(rng.random(n) < 0.5, rng.uniform(0.3, 1.5, n), np.nan)
    mesh = Mesh2D.from_triangles(uv, tris, z=z, edges=edges)
    if n == 3:
        mask = np.add.outer(np.arange(4), np.arange(4)) <= 3
        grid = DepthGrid(np.where(mask, rng.uniform(0.3, 1.5, (4, 4)), np.nan), mask)
        A = build_interpolator(mesh, grid)
    else:
        m = int(rng.integers(1, 5))
        A = SparseInterpolator(
            pixels=np.arange(m),
            vertices=rng.integers(0, n, (m, 3)),
            weights=rng.dirichlet(np.ones(3), m),
            triangles=np.zeros(m, dtype=np.int64),
            n_vertices=n,
            width=m,
            height=1,
        )
        grid = DepthGrid(rng.uniform(0.3, 1.5, (1, m)), np.ones((1, m), bool))
    lam = float(rng.uniform(0.2, 2.0))
    return mesh, A, grid, lam
