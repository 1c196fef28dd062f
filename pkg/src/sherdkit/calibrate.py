"""Real-world scaling from a known reference distance.

A digitized mesh comes out of photogrammetry in arbitrary units; measuring
one known distance on it yields a uniform scale factor that is applied to
every coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DegenerateInputError
from .mesh import TriangleMesh


@dataclass(frozen=True)
class ScaleCalibration:
    """Two reference points on the mesh, the real distance between them (mm),
    and the derived uniform scale factor."""

    point_a: Tuple[float, float, float]
    point_b: Tuple[float, float, float]
    real_distance: float
    factor: float

    def to_dict(self):
        return {
            "point_a": list(self.point_a),
            "point_b": list(self.point_b),
            "real_distance_mm": self.real_distance,
            "factor": self.factor,
        }


def compute_factor(point_a, point_b, real_distance: float) -> ScaleCalibration:
    """Scale factor = known real distance / measured model-space distance."""
    a = np.asarray(point_a, dtype=np.float64)
    b = np.asarray(point_b, dtype=np.float64)
    if a.shape != (3,) or b.shape != (3,):
        raise DegenerateInputError("reference points must be 3D")
    if real_distance <= 0:
        raise DegenerateInputError(f"real distance must be positive, got {real_distance}")
    measured = float(np.linalg.norm(a - b))
    if measured == 0.0:
        raise DegenerateInputError("reference points coincide")
    return ScaleCalibration(
        point_a=tuple(a), point_b=tuple(b),
        real_distance=float(real_distance),
        factor=float(real_distance) / measured,
    )


def apply_scale(mesh: TriangleMesh, calibration: ScaleCalibration,
                recenter: bool = False) -> TriangleMesh:
    """Multiply every coordinate by the calibration factor (about the origin).

    With recenter=True the scaled mesh is translated so its centroid stays
    where the unscaled centroid was.
    """
    if calibration.factor <= 0:
        raise DegenerateInputError("scale factor must be positive")
    scaled = mesh.vertices * calibration.factor
    if recenter:
        scaled = scaled + (mesh.vertices.mean(axis=0) - scaled.mean(axis=0))
    return mesh.with_vertices(scaled)
