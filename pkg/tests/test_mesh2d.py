import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshfuse import DegenerateError, Landmark, Mesh2D, edge_weights, locate, triangulate
from meshfuse.mesh2d import signed_areas, steiner_grid


def test_steiner_grid_64_spacing_50():
    mesh = triangulate([], (64, 64), 50)
    got = {tuple(p) for p in mesh.uv}
    assert got == {(x, y) for x in (0.0, 50.0, 63.0) for y in (0.0, 50.0, 63.0)}
    assert mesh.is_steiner.all()
    assert mesh.n_triangles == 8
    assert mesh.euler_characteristic() == 1


def test_three_landmarks_plus_corners():
    mesh = triangulate([(10, 10), (40, 12), (25, 50)], (64, 64))
    assert mesh.n_vertices == 7
    assert list(mesh.is_steiner) == [False] * 3 + [True] * 4
    # every pixel center lies in some triangle
    for u1 in range(0, 64, 7):
        for u2 in range(0, 64, 7):
            locate(mesh, (u1, u2))


def test_landmark_on_grid_node_is_kept():
    mesh = triangulate([Landmark((50.0, 50.0), 0.5)], (64, 64), 50)
    at = np.flatnonzero((mesh.uv == (50.0, 50.0)).all(axis=1))
    assert len(at) == 1
    k = int(at[0])
    assert not mesh.is_steiner[k]
    assert mesh.z[k] == 0.5
    assert mesh.n_vertices == 9


def test_near_duplicates_merge_keeping_first_landmark():
    mesh = triangulate([(10.0, 10.0), (10.3, 10.1), (30, 5), (5, 30)], (40, 40))
    assert mesh.n_vertices == 3 + 4
    assert tuple(mesh.uv[0]) == (10.0, 10.0)


def test_landmark_next_to_corner_keeps_full_coverage():
    mesh = triangulate([(0.16, 19.6, 0.7), (8, 8)], (19, 21))
    k = int(np.flatnonzero(~np.isnan(mesh.z))[0])
    assert tuple(mesh.uv[k]) == (0.0, 20.0)
    assert not mesh.is_steiner[k]
    for u2 in range(21):
        for u1 in range(19):
            locate(mesh, (u1, u2))


@pytest.mark.parametrize(
    "ui, uj, alpha",
    [((0, 0), (3, 4), 0.2), ((0, 0), (1, 0), 1.0)],
)
def test_edge_weights_examples(ui, uj, alpha):
    mesh = Mesh2D.from_triangles([ui, uj], [], edges=[(0, 1)])
    mesh = edge_weights(mesh)
    assert mesh.alpha[0] == alpha
    assert mesh.beta[0] == 1.0


def test_zero_length_edge_is_degenerate():
    with pytest.raises(DegenerateError, match="degenerate edge"):
        Mesh2D.from_triangles([(10, 10), (10, 10)], [], edges=[(0, 1)])


def test_degenerate_inputs_rejected():
    # triangulate always adds the four corners, so collinear input can only
    # reach the mesh through an explicit triangle list
    with pytest.raises(DegenerateError, match="degenerate"):
        Mesh2D.from_triangles([(0, 0), (1, 1), (2, 2)], [(0, 1, 2)])


def test_bad_inputs():
    with pytest.raises(ValueError):
        triangulate([(70, 3)], (64, 64))
    with pytest.raises(ValueError):
        triangulate([], (1, 5))
    with pytest.raises(ValueError):
        triangulate([], (64, 64), 1.0)
    with pytest.raises(ValueError):
        Landmark((1, 1), -0.5)


def test_edges_adjacency_and_orientation():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 99, (30, 2))
    mesh = triangulate(pts, (100, 100), 25)
    assert np.all(mesh.edges[:, 0] < mesh.edges[:, 1])
    assert len({tuple(e) for e in mesh.edges}) == mesh.n_edges
    sides = set()
    for a, b, c in mesh.triangles:
        sides |= {tuple(sorted(p)) for p in ((a, b), (b, c), (c, a))}
    assert sides == {tuple(e) for e in mesh.edges}
    for k, (i, j) in enumerate(mesh.edges):
        assert k in mesh.out_edges[i]
        assert k in mesh.in_edges[j]
    assert np.all(signed_areas(mesh.uv, mesh.triangles) > 0)
    d = np.linalg.norm(mesh.uv[mesh.edges[:, 0]] - mesh.uv[mesh.edges[:, 1]], axis=1)
    np.testing.assert_allclose(mesh.alpha, 1.0 / d, rtol=1e-15)


def test_steiner_grid_without_spacing_is_corners():
    np.testing.assert_array_equal(steiner_grid(5, 4, None), [[0, 0], [4, 0], [0, 3], [4, 3]])


def _pixel_owner_counts(mesh, width, height):
    """Number of triangles containing each pixel center (closed triangles)."""
    counts = np.zeros((height, width), int)
    v, u = np.mgrid[0:height, 0:width]
    pts = np.column_stack([u.ravel(), v.ravel()]).astype(float)
    for tri in mesh.triangles:
        a, b, c = mesh.uv[tri]
        m = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
        lam = np.linalg.solve(m, (pts - a).T).T
        inside = (lam[:, 0] >= -1e-9) & (lam[:, 1] >= -1e-9) & (lam.sum(axis=1) <= 1 + 1e-9)
        counts.ravel()[inside] += 1
    return counts


points = st.lists(
    st.tuples(st.floats(0, 47, allow_nan=False), st.floats(0, 39, allow_nan=False)), max_size=46
)


@settings(max_examples=60, deadline=None)
@given(points, st.sampled_from([None, 7.0, 16.0, 50.0]))
def test_euler_coverage_and_delaunay(pts, spacing):
    mesh = triangulate(pts, (48, 40), spacing)
    assert mesh.euler_characteristic() == 1
    # every pixel is in at least one closed triangle; the interpolator then
    # picks exactly one owner by the lowest-index rule
    assert _pixel_owner_counts(mesh, 48, 40).min() >= 1
    total_area = signed_areas(mesh.uv, mesh.triangles).sum() / 2
    assert total_area == pytest.approx(47 * 39)

    if mesh.n_vertices > 50:
        return
    # empty-circumcircle check; coordinates scaled to the unit square so the
    # determinant tolerance is scale-free
    uv = mesh.uv / 48.0
    for tri in mesh.triangles:
        a, b, c = (uv[k] - uv for k in tri)
        det = (
            (a[:, 0] ** 2 + a[:, 1] ** 2) * (b[:, 0] * c[:, 1] - c[:, 0] * b[:, 1])
            - (b[:, 0] ** 2 + b[:, 1] ** 2) * (a[:, 0] * c[:, 1] - c[:, 0] * a[:, 1])
            + (c[:, 0] ** 2 + c[:, 1] ** 2) * (a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1])
        )
        others = np.ones(len(uv), bool)
        others[tri] = False
        assert np.all(det[others] <= 1e-9)
