import numpy as np
import pytest
from _instances import random_grid, random_mesh

from meshfuse import DepthGrid, Mesh2D, UncoveredPixelError, build_interpolator, locate, render, triangulate
from meshfuse.barycentric import apply, apply_adjoint


@pytest.fixture
def square():
    # two triangles sharing the diagonal (0,0)-(4,4)
    return Mesh2D.from_triangles([(0, 0), (4, 0), (4, 4), (0, 4)], [(0, 1, 2), (0, 2, 3)])


def test_locate_vertex(square):
    t, w = locate(square, (4, 0))
    assert t == 0
    np.testing.assert_array_equal(w, [0, 1, 0])


def test_locate_centroid(square):
    t, w = locate(square, (4 / 3 * 2, 4 / 3))
    assert t == 0
    np.testing.assert_allclose(w, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_locate_shared_edge_goes_to_lowest_triangle(square):
    t, w = locate(square, (2, 2))
    assert t == 0
    np.testing.assert_allclose(w, [0.5, 0, 0.5], atol=1e-15)


def test_locate_outside_hull():
    mesh = Mesh2D.from_triangles([(0, 0), (4, 0), (0, 4)], [(0, 1, 2)])
    with pytest.raises(UncoveredPixelError, match="uncovered pixel"):
        locate(mesh, (4, 4))


def test_fully_invalid_grid_gives_no_rows(square):
    grid = DepthGrid(np.full((5, 5), np.nan), np.zeros((5, 5), bool))
    A = build_interpolator(square, grid)
    assert A.n_valid_pixels == 0
    assert A.matrix.shape == (0, 4)


def test_two_by_two_grid():
    mesh = triangulate([], (2, 2))
    A = build_interpolator(mesh, DepthGrid.from_values(np.ones((2, 2))))
    assert A.n_valid_pixels == 4
    np.testing.assert_allclose(A.weights.sum(axis=1), 1.0, atol=1e-9)


def test_rows_follow_valid_mask_in_raster_order():
    rng = np.random.default_rng(1)
    mesh, w, h = random_mesh(rng)
    grid = random_grid(rng, w, h, invalid=0.3)
    A = build_interpolator(mesh, grid)
    expected = [v * w + u for v in range(h) for u in range(w) if grid.mask[v, u]]
    assert A.n_valid_pixels == len(expected)
    np.testing.assert_array_equal(A.pixels, expected)


def test_full_grid_partitions_pixels():
    rng = np.random.default_rng(2)
    mesh, w, h = random_mesh(rng)
    A = build_interpolator(mesh, DepthGrid.from_values(np.ones((h, w))))
    assert sorted(A.pixels) == list(range(w * h))
    assert np.all((A.triangles >= 0) & (A.triangles < mesh.n_triangles))


@pytest.mark.parametrize("seed", range(10))
def test_row_stochastic_and_affine_exact(seed):
    rng = np.random.default_rng(seed)
    mesh, w, h = random_mesh(rng)
    A = build_interpolator(mesh, random_grid(rng, w, h))
    assert np.all(A.weights >= 0)
    np.testing.assert_allclose(A.weights.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(apply(A, np.full(mesh.n_vertices, 0.7)), 0.7, atol=1e-12)
    a, b, c = rng.normal(size=3)
    ramp = a * mesh.uv[:, 0] + b * mesh.uv[:, 1] + c
    uv = A.pixel_coords()
    np.testing.assert_allclose(apply(A, ramp), a * uv[:, 0] + b * uv[:, 1] + c, atol=1e-9)


def test_three_vertex_mesh_against_direct_evaluation():
    rng = np.random.default_rng(3)
    uv = np.array([(0.0, 0.0), (9.0, 1.0), (2.0, 7.0)])
    mesh = Mesh2D.from_triangles(uv, [(0, 1, 2)])
    grid = DepthGrid.from_values(np.ones((8, 10)))
    with pytest.raises(UncoveredPixelError):
        build_interpolator(mesh, grid)
    # keep only pixels inside the triangle, found by a direct inside test
    v, u = np.mgrid[0:8, 0:10]
    p = np.column_stack([u.ravel(), v.ravel()]).astype(float)
    T = np.column_stack([uv[1] - uv[0], uv[2] - uv[0]])
    lam = np.linalg.solve(T, (p - uv[0]).T).T
    bary = np.column_stack([1 - lam.sum(axis=1), lam])
    inside = np.all(bary >= -1e-12, axis=1)
    grid = DepthGrid(np.where(inside.reshape(8, 10), 1.0, np.nan), inside.reshape(8, 10))
    A = build_interpolator(mesh, grid)
    xi = rng.uniform(0.2, 2.0, 3)
    np.testing.assert_allclose(apply(A, xi), bary[inside] @ xi, atol=1e-12)


def test_adjoint_examples():
    mesh = Mesh2D.from_triangles([(0, 0), (4, 0), (0, 4)], [(0, 1, 2)])
    mask = np.zeros((5, 5), bool)
    mask[1, 1] = True
    A = build_interpolator(mesh, DepthGrid(np.where(mask, 1.0, np.nan), mask))
    np.testing.assert_array_equal(apply_adjoint(A, np.zeros(1)), 0)
    np.testing.assert_allclose(apply_adjoint(A, np.ones(1)), [0.5, 0.25, 0.25])


def test_length_mismatch():
    mesh = triangulate([], (3, 3))
    A = build_interpolator(mesh, DepthGrid.from_values(np.ones((3, 3))))
    with pytest.raises(ValueError):
        apply(A, np.ones(3))
    with pytest.raises(ValueError):
        apply_adjoint(A, np.ones(8))


def test_adjoint_identity_100_instances():
    rng = np.random.default_rng(11)
    for _ in range(100):
        mesh, w, h = random_mesh(rng)
        A = build_interpolator(mesh, random_grid(rng, w, h))
        x = rng.normal(size=mesh.n_vertices)
        p = rng.normal(size=A.n_valid_pixels)
        assert abs(apply(A, x) @ p - x @ apply_adjoint(A, p)) <= 1e-10


def test_render_matches_interpolator():
    rng = np.random.default_rng(5)
    mesh, w, h = random_mesh(rng)
    A = build_interpolator(mesh, DepthGrid.from_values(np.ones((h, w))))
    img = render(mesh, w, h)
    np.testing.assert_allclose(img.ravel()[A.pixels], apply(A, mesh.xi), rtol=0, atol=1e-14)


def test_depth_grid_validation():
    with pytest.raises(ValueError):
        DepthGrid(np.array([[1.0, -1.0]]), np.array([[True, True]]))
    g = DepthGrid.from_values([[1.0, 0.0], [np.nan, 2.0]])
    np.testing.assert_array_equal(g.mask, [[True, False], [False, True]])
    assert g.n_valid == 2
