"""Synthetic vessels, fracturing, and scenario manifests."""

import json
import math

import numpy as np
import pytest

from sherdkit import (
    DegenerateInputError,
    FracturePlan,
    VesselProfile,
    band_split,
    diagnose,
    enclosed_volume,
    fracture,
    generate_vessel,
    icosphere,
    make_box,
    write_scenario_manifest,
)


def _simple_profile(segments=64):
    return VesselProfile(
        control=((0.0, 30.0, 4.0), (40.0, 35.0, 4.0), (80.0, 30.0, 4.0)),
        segments=segments,
    )


def test_make_box_watertight_unit_volume():
    cube = make_box()
    diag = diagnose(cube)
    assert diag.is_watertight and diag.is_orientable
    assert enclosed_volume(cube) == pytest.approx(0.001, rel=1e-12)


def test_icosphere_counts_and_radius():
    mesh = icosphere(5.0, 3)
    assert mesh.triangle_count == 20 * 4**3
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 5.0)


def test_generate_vessel_watertight():
    mesh, capacity, wall = generate_vessel(_simple_profile())
    diag = diagnose(mesh)
    assert diag.is_watertight
    assert diag.is_orientable
    assert capacity > wall > 0


def test_generate_vessel_volume_matches_analytic_wall():
    profile = _simple_profile(segments=512)
    mesh, _, wall = generate_vessel(profile)
    # enclosed mesh volume converges to the analytic wall-material volume
    assert enclosed_volume(mesh) == pytest.approx(wall, rel=2e-3)


def test_vessel_profile_validation():
    with pytest.raises(DegenerateInputError):
        VesselProfile(control=((0.0, 30.0, 4.0),))
    with pytest.raises(DegenerateInputError):
        VesselProfile(control=((0.0, 30.0, 4.0), (0.0, 35.0, 4.0)))
    with pytest.raises(DegenerateInputError):
        VesselProfile(control=((0.0, 3.0, 4.0), (10.0, 30.0, 4.0)))
    with pytest.raises(DegenerateInputError):
        VesselProfile(control=((0.0, 30.0, 4.0), (10.0, 30.0, 4.0)), segments=4)


def test_fracture_partitions_all_triangles():
    mesh, _, _ = generate_vessel(_simple_profile())
    plan = FracturePlan(seed_count=6, rng_seed=3)
    sherds = fracture(mesh, plan)
    total = sum(m.triangle_count for m, _ in sherds)
    assert total == mesh.triangle_count
    for _, pose in sherds:
        assert np.allclose(pose.rotation, np.eye(3))


def test_fracture_deterministic():
    mesh, _, _ = generate_vessel(_simple_profile())
    plan = FracturePlan(seed_count=5, rng_seed=11, scatter=True)
    first = fracture(mesh, plan)
    second = fracture(mesh, plan)
    assert len(first) == len(second)
    for (ma, pa), (mb, pb) in zip(first, second):
        assert np.array_equal(ma.vertices, mb.vertices)
        assert np.allclose(pa.rotation, pb.rotation)


def test_fracture_scatter_poses_undoable():
    mesh, _, _ = generate_vessel(_simple_profile())
    plan = FracturePlan(seed_count=5, rng_seed=2, scatter=True)
    unscattered = fracture(mesh, FracturePlan(seed_count=5, rng_seed=2))
    scattered = fracture(mesh, plan)
    for (m0, _), (m1, pose) in zip(unscattered, scattered):
        restored = pose.inverse().apply(m1.vertices)
        assert np.allclose(restored, m0.vertices, atol=1e-9)


def test_fracture_noise_moves_vertices_along_normals():
    mesh, _, _ = generate_vessel(_simple_profile())
    quiet = fracture(mesh, FracturePlan(seed_count=4, rng_seed=9))
    noisy = fracture(mesh, FracturePlan(seed_count=4, rng_seed=9, noise_sigma=0.05))
    shifts = np.linalg.norm(noisy[0][0].vertices - quiet[0][0].vertices, axis=1)
    assert shifts.max() < 0.5
    assert shifts.std() > 0.0


def test_band_split_separates_sheets():
    mesh, _, _ = generate_vessel(_simple_profile())
    inner, outer = band_split(mesh, (0.0, 0.0, 1.0))
    # outer sheet sits at larger cylinder radius than the inner sheet
    r_out = np.hypot(outer.vertices[:, 0], outer.vertices[:, 1]).mean()
    r_in = np.hypot(inner.vertices[:, 0], inner.vertices[:, 1]).mean()
    assert r_out > r_in


def test_write_scenario_manifest(tmp_path):
    mesh, capacity, wall = generate_vessel(_simple_profile())
    plan = FracturePlan(seed_count=4, rng_seed=1, scatter=True)
    sherds = fracture(mesh, plan)
    path = tmp_path / "scenario.json"
    write_scenario_manifest(path, _simple_profile(), plan, sherds, capacity, wall)
    doc = json.loads(path.read_text())
    assert doc["wall_cm3"] == wall
    assert len(doc["sherds"]) == len(sherds)
    assert doc["fracture"]["rng_seed"] == 1
    pose = doc["sherds"][0]["true_pose"]
    assert len(pose["rotation"]) == 3
