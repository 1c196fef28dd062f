"""Mesh file round-trips and malformed-file diagnostics."""

import struct

import numpy as np
import pytest

from sherdkit import MeshFormatError, load_mesh, make_box, save_mesh
from sherdkit import enclosed_volume, icosphere


@pytest.mark.parametrize("ext", ["obj", "ply"])
def test_round_trip_exact(tmp_path, ext):
    mesh = icosphere(7.25, 2, center=(0.125, -3.5, 12.0))
    path = tmp_path / f"mesh.{ext}"
    save_mesh(mesh, path)
    back = load_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)


def test_stl_round_trip_float32(tmp_path):
    mesh = make_box((12.5, 3.25, 9.0), origin=(0.5, -1.25, 2.0))
    path = tmp_path / "mesh.stl"
    save_mesh(mesh, path)
    back = load_mesh(path)
    # STL stores a triangle soup at float32; coordinates survive exactly here
    # because they are representable, but connectivity is expanded
    assert back.triangle_count == mesh.triangle_count
    soup = mesh.vertices[mesh.triangles].reshape(-1, 3)
    assert np.allclose(back.vertices, soup, atol=1e-6)


def test_obj_polygon_faces_are_fanned(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
        "f 1 2 3 4\n"
    )
    mesh = load_mesh(path)
    assert mesh.triangle_count == 2


def test_obj_negative_and_slash_indices(tmp_path):
    path = tmp_path / "slash.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
        "vt 0 0\nvn 0 0 1\n"
        "f -3/1/1 -2/1/1 -1/1/1\n"
    )
    mesh = load_mesh(path)
    assert mesh.triangle_count == 1
    assert np.array_equal(mesh.triangles, [[0, 1, 2]])


def test_obj_bad_face_reports_line(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(path)
    assert err.value.line == 4
    assert ":4:" in str(err.value)


def test_ply_ascii_load(tmp_path):
    path = tmp_path / "tri.ply"
    path.write_text(
        "ply\nformat ascii 1.0\n"
        "element vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
        "0 0 0\n1 0 0\n0 1 0\n"
        "3 0 1 2\n"
    )
    mesh = load_mesh(path)
    assert mesh.vertex_count == 3
    assert mesh.triangle_count == 1


def test_ply_truncated_binary(tmp_path):
    mesh = make_box()
    path = tmp_path / "cut.ply"
    save_mesh(mesh, path)
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(MeshFormatError, match="truncated"):
        load_mesh(path)


def test_stl_size_mismatch(tmp_path):
    path = tmp_path / "bad.stl"
    path.write_bytes(b"\0" * 80 + struct.pack("<I", 5) + b"\0" * 17)
    with pytest.raises(MeshFormatError, match="size mismatch"):
        load_mesh(path)


def test_unknown_extension(tmp_path):
    path = tmp_path / "mesh.xyz"
    path.write_text("v 0 0 0\n")
    with pytest.raises(MeshFormatError, match="extension"):
        load_mesh(path)


def test_missing_file(tmp_path):
    with pytest.raises(MeshFormatError, match="not found"):
        load_mesh(tmp_path / "absent.obj")


def test_explicit_format_overrides_extension(tmp_path):
    mesh = make_box()
    path = tmp_path / "mesh.dat"
    save_mesh(mesh, path, format="obj")
    back = load_mesh(path, format="obj")
    assert enclosed_volume(back) == pytest.approx(0.001, rel=1e-12)
