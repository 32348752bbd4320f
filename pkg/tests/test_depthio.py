import logging

import numpy as np
import pytest

from meshfuse import DepthGrid, Mesh2D, FormatError, triangulate
from meshfuse.depthio import (
    Intrinsics,
    back_project,
    format_config,
    mesh_from_points,
    parse_config,
    parse_landmarks,
    read_depth,
    read_landmarks,
    read_mesh,
    read_pfm,
    read_pgm16,
    write_depth,
    write_landmarks,
    write_mesh,
    write_pfm,
    write_pgm16,
)


def test_csv_depth_is_inverted(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2\n4,0.5\n")
    g = read_depth(p)
    np.testing.assert_array_equal(g.values, [[1.0, 0.5], [0.25, 2.0]])
    assert g.mask.all()


def test_bad_pixels_are_invalid(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,nan\n-3,inf\n2,1\n")
    g = read_depth(p)
    np.testing.assert_array_equal(g.mask, [[False, False], [False, False], [True, True]])
    assert np.isnan(g.values[~g.mask]).all()


def test_csv_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(FormatError, match="dimension mismatch"):
        read_depth(p)
    p.write_text("1,x\n")
    with pytest.raises(FormatError, match="line 1"):
        read_depth(p)
    with pytest.raises(FormatError, match="unknown depth kind"):
        read_depth(p, kind="exr")
    with pytest.raises(FormatError, match="cannot infer"):
        read_depth(tmp_path / "d.tiff")


def _random_depth(rng, h=7, w=5):
    depth = rng.uniform(0.3, 9.0, (h, w))
    depth[rng.random((h, w)) < 0.2] = 0.0
    return depth


def test_pfm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.normal(size=(6, 9)).astype(np.float32)
    arr[0, 0] = np.nan
    p = tmp_path / "a.pfm"
    write_pfm(p, arr)
    back = read_pfm(p)
    assert back.dtype == np.float32
    assert back.tobytes() == arr.tobytes()


def test_pfm_row_order_and_endianness(tmp_path):
    arr = np.array([[1, 2, 3], [4, 5, 6]], np.float32)
    p = tmp_path / "a.pfm"
    # hand-written big-endian file: positive scale, rows bottom to top
    p.write_bytes(b"Pf\n3 2\n1.0\n" + arr[::-1].astype(">f4").tobytes())
    np.testing.assert_array_equal(read_pfm(p), arr)
    write_pfm(p, arr)
    data = p.read_bytes()
    assert data.startswith(b"Pf\n3 2\n-")
    assert data.endswith(arr[::-1].astype("<f4").tobytes())


def test_pfm_errors(tmp_path):
    p = tmp_path / "a.pfm"
    p.write_bytes(b"PF\n3 2\n-1.0\n" + b"\0" * 12)
    with pytest.raises(FormatError):
        read_pfm(p)
    p.write_bytes(b"P5\n3 2\n-1.0\n")
    with pytest.raises(FormatError):
        read_pfm(p)


def test_depth_grid_round_trips(tmp_path):
    rng = np.random.default_rng(1)
    g = DepthGrid.from_values(1.0 / np.where((d := _random_depth(rng)) > 0, d, np.inf))
    for name in ("g.pfm", "g.csv"):
        write_depth(tmp_path / name, g)
        first = (tmp_path / name).read_bytes()
        back = read_depth(tmp_path / name)
        np.testing.assert_array_equal(back.mask, g.mask)
        write_depth(tmp_path / name, back)
        assert (tmp_path / name).read_bytes() == first
    back = read_depth(tmp_path / "g.csv")
    # CSV keeps full precision, so the reciprocal of the reciprocal is exact
    np.testing.assert_allclose(back.values[g.mask], g.values[g.mask], rtol=1e-15)


def test_pgm16_round_trip_and_scale(tmp_path):
    rng = np.random.default_rng(2)
    raw = rng.integers(0, 65536, (4, 6)).astype(np.uint16)
    p = tmp_path / "a.pgm"
    write_pgm16(p, raw)
    assert p.read_bytes().startswith(b"P5\n6 4\n65535\n")
    np.testing.assert_array_equal(read_pgm16(p), raw)
    with pytest.raises(FormatError, match="scale"):
        read_depth(p)
    g = read_depth(p, scale=0.001)
    nz = raw > 0
    np.testing.assert_array_equal(g.mask, nz)
    np.testing.assert_allclose(g.values[nz], 1.0 / (raw[nz] * 0.001), rtol=1e-15)
    # writer emits the sidecar scale and reproduces the same units
    write_depth(tmp_path / "b.pgm", g, scale=0.001)
    np.testing.assert_array_equal(read_pgm16(tmp_path / "b.pgm"), raw)
    assert read_depth(tmp_path / "b.pgm").mask.tolist() == nz.tolist()
    with pytest.raises(ValueError):
        write_depth(tmp_path / "c.pgm", g)


def test_mesh_at_principal_point(tmp_path):
    mesh = Mesh2D.from_triangles([(3.0, 2.0)], [], edges=[]).with_state(xi=[0.5])
    K = Intrinsics(100.0, 120.0, 3.0, 2.0)
    np.testing.assert_array_equal(back_project(mesh, K), [[0.0, 0.0, 2.0]])
    write_mesh(mesh, K, tmp_path / "m.obj")
    assert (tmp_path / "m.obj").read_text() == "v 0.0 0.0 2.0\n"


def _fitted_mesh():
    rng = np.random.default_rng(3)
    mesh = triangulate(rng.uniform(0, 1, (12, 2)) * (39, 29), (40, 30), 15)
    return mesh.with_state(xi=rng.uniform(0.2, 2.0, mesh.n_vertices))


def test_obj_round_trip(tmp_path):
    mesh = _fitted_mesh()
    K = Intrinsics.default(40, 30)
    write_mesh(mesh, K, tmp_path / "m.obj")
    verts, faces = read_mesh(tmp_path / "m.obj")
    np.testing.assert_allclose(verts, back_project(mesh, K), atol=1e-6)
    np.testing.assert_array_equal(faces, mesh.triangles)
    back = mesh_from_points(verts, faces, K)
    np.testing.assert_allclose(back.uv, mesh.uv, atol=1e-9)
    np.testing.assert_allclose(back.xi, mesh.xi, rtol=1e-12)
    write_mesh(back, K, tmp_path / "n.obj")
    v2, f2 = read_mesh(tmp_path / "n.obj")
    np.testing.assert_allclose(v2, verts, rtol=1e-12)
    np.testing.assert_array_equal(f2, faces)


def test_ply_face_count_and_round_trip(tmp_path):
    mesh = _fitted_mesh()
    K = Intrinsics.default(40, 30)
    write_mesh(mesh, K, tmp_path / "m.ply")
    data = (tmp_path / "m.ply").read_bytes()
    assert f"element face {mesh.n_triangles}\n".encode() in data
    verts, faces = read_mesh(tmp_path / "m.ply")
    assert len(faces) == mesh.n_triangles
    np.testing.assert_array_equal(faces, mesh.triangles)
    assert verts.tobytes() == back_project(mesh, K).astype("<f4").tobytes()


def test_mesh_errors(tmp_path):
    mesh = _fitted_mesh()
    K = Intrinsics.default(40, 30)
    with pytest.raises(FormatError):
        write_mesh(mesh, K, tmp_path / "m.stl")
    bad = mesh.with_state(xi=np.where(np.arange(mesh.n_vertices) == 2, 0.0, mesh.xi))
    with pytest.raises(ValueError, match="vertex 2"):
        write_mesh(bad, K, tmp_path / "m.obj")
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)
    (tmp_path / "b.obj").write_text("v 0 0 1\nf 1 2 3\n")
    with pytest.raises(FormatError, match="missing vertex"):
        read_mesh(tmp_path / "b.obj")


def test_landmark_records(tmp_path):
    lms, rejected = parse_landmarks(["10,20,4.0", "10,20,-1", "# note", "", "3,4"])
    assert rejected == 1
    assert len(lms) == 2
    assert lms[0].u == (10.0, 20.0) and lms[0].z == 0.25
    assert lms[1].z is None


def test_landmark_file_warns_on_rejects(tmp_path, caplog):
    p = tmp_path / "lm.csv"
    p.write_text("10,20,4.0\n10,20,-1\n11,21,0\n")
    with caplog.at_level(logging.WARNING):
        lms = read_landmarks(p)
    assert len(lms) == 1
    assert "rejected 2" in caplog.text


def test_empty_landmark_file(tmp_path):
    p = tmp_path / "lm.csv"
    p.write_text("")
    assert read_landmarks(p) == []


def test_malformed_landmark_line_number():
    with pytest.raises(FormatError, match="line 3"):
        parse_landmarks(["1,2", "3,4,5", "oops,2"])
    with pytest.raises(FormatError, match="line 1"):
        parse_landmarks(["1,2,3,4"])


def test_landmark_round_trip(tmp_path):
    lms, _ = parse_landmarks(["10.5,20.25,3.0", "1,2"])
    p = tmp_path / "lm.csv"
    write_landmarks(p, lms)
    first = p.read_bytes()
    back = read_landmarks(p)
    assert back[0].u == lms[0].u and back[1].z is None
    write_landmarks(p, back)
    assert p.read_bytes() == first


def test_config_parse_and_format():
    text = "# solver\nlambda = 0.5\nmax_iters=200  # budget\n\nsteiner = 50\n"
    cfg = parse_config(text)
    assert cfg == {"lambda": "0.5", "max_iters": "200", "steiner": "50"}
    assert parse_config(format_config(cfg)) == cfg
    with pytest.raises(FormatError, match="line 2"):
        parse_config("a = 1\nnot a pair\n")
    with pytest.raises(FormatError, match="empty key"):
        parse_config(" = 3")
