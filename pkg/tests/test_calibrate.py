"""Reference-distance scale calibration."""

import numpy as np
import pytest

from sherdkit import DegenerateInputError, apply_scale, compute_factor, make_box


def test_factor_from_reference_distance():
    cal = compute_factor((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), 50.0)
    assert cal.factor == pytest.approx(25.0, rel=1e-12)


def test_apply_scale_scales_all_coordinates():
    mesh = make_box((2.0, 2.0, 2.0))
    cal = compute_factor((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), 10.0)
    scaled = apply_scale(mesh, cal)
    assert np.allclose(scaled.vertices, mesh.vertices * 5.0)


def test_apply_scale_recenter_keeps_centroid():
    mesh = make_box(origin=(10.0, 20.0, 30.0))
    cal = compute_factor((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 4.0)
    scaled = apply_scale(mesh, cal, recenter=True)
    assert np.allclose(scaled.vertices.mean(axis=0), mesh.vertices.mean(axis=0))
    span = scaled.vertices.max(axis=0) - scaled.vertices.min(axis=0)
    assert np.allclose(span, 4.0)


def test_coincident_reference_points_rejected():
    with pytest.raises(DegenerateInputError, match="coincide"):
        compute_factor((1.0, 2.0, 3.0), (1.0, 2.0, 3.0), 10.0)


def test_nonpositive_distance_rejected():
    with pytest.raises(DegenerateInputError):
        compute_factor((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0)
    with pytest.raises(DegenerateInputError):
        compute_factor((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), -3.0)


def test_calibration_serializes():
    cal = compute_factor((0.0, 0.0, 0.0), (0.0, 3.0, 0.0), 30.0)
    doc = cal.to_dict()
    assert doc["factor"] == pytest.approx(10.0)
    assert doc["real_distance_mm"] == 30.0
