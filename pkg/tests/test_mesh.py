"""Core mesh type, diagnostics, volume kernel, hull and welding."""

import math

import numpy as np
import pytest

from sherdkit import (
    DegenerateInputError,
    InvalidMeshError,
    NotWatertightError,
    OrientationError,
    TriangleMesh,
    convex_hull,
    diagnose,
    enclosed_volume,
    icosphere,
    laplacian_smooth,
    make_box,
    orient_consistently,
    split_components,
    weld_vertices,
)


def test_unit_cube_volume_exact():
    cube = make_box((1.0, 1.0, 1.0))
    assert enclosed_volume(cube) == pytest.approx(0.001, rel=1e-12)


def test_cube_volume_translation_invariant():
    cube = make_box((1.0, 1.0, 1.0), origin=(1234.5, -777.25, 3.875))
    assert enclosed_volume(cube) == pytest.approx(0.001, rel=1e-9)


def test_icosphere_volume_within_one_percent():
    mesh = icosphere(10.0, 4)
    analytic = 4.0 / 3.0 * math.pi * 1000.0 / 1000.0  # cm^3
    assert enclosed_volume(mesh) == pytest.approx(analytic, rel=0.01)


def test_volume_rigid_invariance():
    mesh = icosphere(7.0, 2)
    base = enclosed_volume(mesh)
    theta = 0.83
    rot = np.array([
        [math.cos(theta), -math.sin(theta), 0.0],
        [math.sin(theta), math.cos(theta), 0.0],
        [0.0, 0.0, 1.0],
    ])
    moved = mesh.with_vertices(mesh.vertices @ rot.T + np.array([11.0, -4.0, 2.5]))
    assert enclosed_volume(moved) == pytest.approx(base, rel=1e-9)


def test_triangle_mesh_validation():
    with pytest.raises(InvalidMeshError):
        TriangleMesh(np.zeros((3, 2)), np.array([[0, 1, 2]]))
    with pytest.raises(InvalidMeshError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))
    with pytest.raises(InvalidMeshError):
        TriangleMesh(np.array([[0.0, 0.0, np.nan]] * 3), np.array([[0, 1, 2]]))


def test_mesh_arrays_read_only():
    cube = make_box()
    with pytest.raises(ValueError):
        cube.vertices[0, 0] = 5.0


def test_open_mesh_refused():
    tri = TriangleMesh(np.eye(3), np.array([[0, 1, 2]]))
    with pytest.raises(NotWatertightError):
        enclosed_volume(tri)


def test_inconsistent_orientation_refused_then_fixed():
    cube = make_box((2.0, 2.0, 2.0))
    tris = cube.triangles.copy()
    tris[3] = tris[3][::-1]
    broken = TriangleMesh(cube.vertices, tris)
    with pytest.raises(OrientationError):
        enclosed_volume(broken)
    fixed = orient_consistently(broken)
    assert enclosed_volume(fixed) == pytest.approx(0.008, rel=1e-12)


def test_orient_consistently_flips_inverted_mesh():
    cube = make_box((1.0, 1.0, 1.0))
    inverted = TriangleMesh(cube.vertices, cube.triangles[:, ::-1])
    fixed = orient_consistently(inverted)
    assert enclosed_volume(fixed) == pytest.approx(0.001, rel=1e-12)


def test_weld_vertices_merges_duplicates():
    cube = make_box()
    tris = cube.triangles
    # expand to triangle soup: every triangle gets private vertices
    soup_verts = cube.vertices[tris].reshape(-1, 3)
    soup_tris = np.arange(len(soup_verts)).reshape(-1, 3)
    soup = TriangleMesh(soup_verts, soup_tris)
    welded = weld_vertices(soup)
    assert welded.vertex_count == 8
    assert enclosed_volume(welded) == pytest.approx(0.001, rel=1e-12)


def test_weld_drops_degenerate_triangles():
    verts = np.array([[0.0, 0.0, 0.0], [1e-7, 0.0, 0.0], [1.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    welded = weld_vertices(TriangleMesh(verts, tris), tolerance=1e-4)
    assert welded.triangle_count == 1


def test_diagnose_reports_boundary_and_components():
    cube = make_box()
    other = make_box(origin=(5.0, 5.0, 5.0))
    verts = np.vstack([cube.vertices, other.vertices])
    tris = np.vstack([cube.triangles, other.triangles + 8])
    two = TriangleMesh(verts, tris)
    diag = diagnose(two)
    assert diag.is_watertight
    assert diag.connected_components == 2
    assert diag.boundary_edge_count == 0

    open_tri = TriangleMesh(np.eye(3), np.array([[0, 1, 2]]))
    diag2 = diagnose(open_tri)
    assert not diag2.is_watertight
    assert diag2.boundary_edge_count == 3


def test_split_components_largest_first():
    big = icosphere(5.0, 1)
    small = make_box(origin=(50.0, 0.0, 0.0))
    verts = np.vstack([small.vertices, big.vertices])
    tris = np.vstack([small.triangles, big.triangles + 8])
    parts = split_components(TriangleMesh(verts, tris))
    assert len(parts) == 2
    assert parts[0].triangle_count > parts[1].triangle_count
    assert parts[1].triangle_count == 12


def test_convex_hull_of_cube_corners():
    corners = make_box((10.0, 10.0, 10.0)).vertices
    hull = convex_hull(corners)
    assert enclosed_volume(hull) == pytest.approx(1.0, rel=1e-12)


def test_convex_hull_contains_interior_points():
    rng = np.random.default_rng(4)
    pts = np.vstack([make_box((10.0, 10.0, 10.0)).vertices,
                     rng.uniform(1.0, 9.0, size=(50, 3))])
    hull = convex_hull(pts)
    assert hull.vertex_count == 8


@pytest.mark.parametrize("points,word", [
    (np.zeros((5, 3)), "point"),
    (np.outer(np.arange(5.0), [1.0, 2.0, 0.5]), "collinear"),
    (np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.3, 0.9, 0]]), "coplanar"),
])
def test_convex_hull_degenerate_inputs(points, word):
    with pytest.raises(DegenerateInputError, match=word):
        convex_hull(points)


def test_laplacian_smooth_shrinks_sphere_slightly():
    mesh = icosphere(10.0, 2)
    smoothed = laplacian_smooth(mesh, 2, 0.2)
    assert smoothed.vertex_count == mesh.vertex_count
    assert smoothed.triangle_count == mesh.triangle_count
    r = np.linalg.norm(smoothed.vertices, axis=1)
    assert (r < 10.0).all()
    assert r.min() > 9.0


def test_face_normals_outward_for_box():
    cube = make_box((2.0, 2.0, 2.0))
    normals = cube.face_normals()
    centroids = cube.vertices[cube.triangles].mean(axis=1) - 1.0
    assert (np.einsum("ij,ij->i", normals, centroids) > 0).all()
