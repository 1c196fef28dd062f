"""Vessel-of-revolution profile: rim circle fitting, coaxial skeleton, volumes.

The workflow mirrors manual vessel reconstruction from sherds: fit circles
to rim and feature arcs, stack them along a common axis, then measure the
implied solid either as a surface of revolution or as the convex hull of
the circle stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DegenerateInputError
from .mesh import TriangleMesh, convex_hull, enclosed_volume


@dataclass(frozen=True)
class Circle3D:
    """A circle in 3D: center (mm), radius (mm), unit plane normal."""

    center: np.ndarray
    radius: float
    normal: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.center, dtype=np.float64))
        n = np.ascontiguousarray(np.asarray(self.normal, dtype=np.float64))
        if c.shape != (3,) or n.shape != (3,):
            raise DegenerateInputError("center and normal must be 3-vectors")
        if self.radius <= 0:
            raise DegenerateInputError(f"radius must be positive, got {self.radius}")
        length = np.linalg.norm(n)
        if abs(length - 1.0) > 1e-6:
            if length == 0:
                raise DegenerateInputError("normal must be nonzero")
            n = n / length
        c.flags.writeable = False
        n.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "radius", float(self.radius))

    def sample(self, segments: int) -> np.ndarray:
        """`segments` evenly spaced points on the circle."""
        u, v = _plane_basis(self.normal)
        phi = np.arange(segments) * (2.0 * math.pi / segments)
        return (
            self.center
            + self.radius * np.cos(phi)[:, None] * u
            + self.radius * np.sin(phi)[:, None] * v
        )

    def to_dict(self):
        return {
            "center": [float(x) for x in self.center],
            "radius_mm": self.radius,
            "normal": [float(x) for x in self.normal],
        }


@dataclass(frozen=True)
class CircleFit:
    """Fitted circle plus quality indicators. Unpacks as (circle, rms_residual)."""

    circle: Circle3D
    rms_residual: float
    refined: bool
    refinement_failed: bool = False

    def __iter__(self):
        return iter((self.circle, self.rms_residual))


def _plane_basis(normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def _canonical_sign(vec: np.ndarray) -> np.ndarray:
    """Deterministic sign choice: first nonzero component positive (z, y, x order)."""
    for k in (2, 1, 0):
        if abs(vec[k]) > 1e-12:
            return vec if vec[k] > 0 else -vec
    return vec


def fit_circle(points, refine: bool = True, max_iterations: int = 50,
               step_tolerance: float = 1e-10) -> CircleFit:
    """Least-squares circle through 3D points.

    Plane by principal components, algebraic (linearized) circle fit in the
    plane, then optional Gauss-Newton refinement of the true point-to-circle
    distance. Residual is the RMS 3D distance to the fitted circle.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DegenerateInputError("points must be an (n, 3) array")
    if len(pts) < 3:
        raise DegenerateInputError(f"need at least 3 points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    extent = float(svals[0]) / math.sqrt(len(pts))
    if extent == 0.0 or svals[1] / math.sqrt(len(pts)) < 1e-9 * max(extent, 1e-30):
        raise DegenerateInputError("points are collinear; no circle plane", dimension=1)
    e1, e2, normal = vt[0], vt[1], vt[2]
    u = centered @ e1
    v = centered @ e2
    w = centered @ normal  # out-of-plane offsets

    # algebraic (Kasa) fit: u^2 + v^2 = 2a u + 2b v + c
    a_mat = np.column_stack([2 * u, 2 * v, np.ones(len(u))])
    rhs = u**2 + v**2
    (a, b, c), *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    r2 = c + a * a + b * b
    if r2 <= 0:
        raise DegenerateInputError("algebraic circle fit collapsed")
    r = math.sqrt(r2)

    refined_ok = False
    failed = False
    if refine:
        pa, pb, pr = a, b, r
        prev_cost = _circle_cost(u, v, pa, pb, pr)
        ok = True
        for _ in range(max_iterations):
            du = u - pa
            dv = v - pb
            dist = np.hypot(du, dv)
            dist[dist == 0] = 1e-300
            res = dist - pr
            jac = np.column_stack([-du / dist, -dv / dist, -np.ones(len(u))])
            try:
                step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
            except np.linalg.LinAlgError:
                ok = False
                break
            pa += step[0]
            pb += step[1]
            pr += step[2]
            cost = _circle_cost(u, v, pa, pb, pr)
            if not np.isfinite(cost) or pr <= 0 or cost > 4.0 * prev_cost + 1e-30:
                ok = False
                break
            converged = float(np.max(np.abs(step))) < step_tolerance
            prev_cost = cost
            if converged:
                break
        if ok and np.isfinite(pr) and pr > 0:
            a, b, r = pa, pb, pr
            refined_ok = True
        else:
            failed = True  # fall back to the algebraic solution

    center3d = centroid + a * e1 + b * e2
    circle = Circle3D(center=center3d, radius=r, normal=_canonical_sign(normal.copy()))
    d_plane = np.hypot(u - a, v - b)
    rms = float(np.sqrt(np.mean((d_plane - r) ** 2 + w**2)))
    return CircleFit(circle=circle, rms_residual=rms, refined=refined_ok,
                     refinement_failed=failed)


def _circle_cost(u, v, a, b, r):
    return float(np.sum((np.hypot(u - a, v - b) - r) ** 2))


def estimate_axis(circles: Sequence[Circle3D]):
    """Least-squares axis line through circle centers.

    Returns (axis_point, axis_direction, coaxiality_rms). The direction sign
    follows the mean circle normal when that mean is meaningful.
    """
    if len(circles) < 2:
        raise DegenerateInputError(f"need at least 2 circles, got {len(circles)}")
    centers = np.array([c.center for c in circles])
    normals = np.array([c.normal for c in circles])
    mean_normal = normals.mean(axis=0)
    mean_norm = float(np.linalg.norm(mean_normal))
    centroid = centers.mean(axis=0)
    centered = centers - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    spread = float(svals[0]) / math.sqrt(len(circles))
    scale = max(float(np.abs(centers).max()), 1.0)
    if spread < 1e-9 * scale:
        # coincident centers: direction must come from the normals
        if mean_norm < 0.5:
            raise DegenerateInputError(
                "circle centers coincide and normals conflict; axis undefined"
            )
        direction = mean_normal / mean_norm
    else:
        direction = vt[0] / np.linalg.norm(vt[0])
        if mean_norm >= 0.5 and float(direction @ mean_normal) < 0:
            direction = -direction
        elif mean_norm < 0.5:
            direction = _canonical_sign(direction)
    offsets = centered - np.outer(centered @ direction, direction)
    rms = float(np.sqrt(np.mean(np.sum(offsets**2, axis=1))))
    return centroid, direction, rms


@dataclass(frozen=True)
class ProfileSkeleton:
    """Ordered stack of coaxial rings (height along axis, radius), in mm."""

    axis_point: np.ndarray
    axis_direction: np.ndarray
    rings: np.ndarray  # (n, 2): height, radius
    coaxiality_rms: float
    bottom_closed: bool = True

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.axis_point, dtype=np.float64))
        d = np.ascontiguousarray(np.asarray(self.axis_direction, dtype=np.float64))
        rings = np.ascontiguousarray(np.asarray(self.rings, dtype=np.float64))
        if rings.ndim != 2 or rings.shape[1] != 2 or len(rings) < 2:
            raise DegenerateInputError("rings must be an (n>=2, 2) array")
        if not (np.diff(rings[:, 0]) > 0).all():
            raise DegenerateInputError("ring heights must be strictly increasing")
        if not (rings[:, 1] > 0).all():
            raise DegenerateInputError("ring radii must be positive")
        length = np.linalg.norm(d)
        if length == 0:
            raise DegenerateInputError("axis direction must be nonzero")
        d = d / length
        for arr in (p, d, rings):
            arr.flags.writeable = False
        object.__setattr__(self, "axis_point", p)
        object.__setattr__(self, "axis_direction", d)
        object.__setattr__(self, "rings", rings)

    def ring_points(self, segments: int) -> np.ndarray:
        """Sample every ring into `segments` points (row-major by ring)."""
        u, v = _plane_basis(self.axis_direction)
        phi = np.arange(segments) * (2.0 * math.pi / segments)
        ring_pts = []
        for h, r in self.rings:
            base = self.axis_point + h * self.axis_direction
            ring_pts.append(base + r * np.cos(phi)[:, None] * u + r * np.sin(phi)[:, None] * v)
        return np.vstack(ring_pts)


def build_skeleton(circles: Sequence[Circle3D], bottom_closed: bool = True) -> ProfileSkeleton:
    """Reduce fitted circles to (height, radius) rings on their common axis.

    Rings closer than 1e-6 mm in height are merged by radius averaging;
    the result is sorted by height.
    """
    axis_point, direction, rms = estimate_axis(circles)
    heights = np.array([(c.center - axis_point) @ direction for c in circles])
    radii = np.array([c.radius for c in circles])
    order = np.argsort(heights, kind="stable")
    heights = heights[order]
    radii = radii[order]
    merged: List[Tuple[float, List[float]]] = []
    for h, r in zip(heights, radii):
        if merged and h - merged[-1][0] <= 1e-6:
            merged[-1][1].append(r)
        else:
            merged.append((h, [r]))
    if len(merged) < 2:
        raise DegenerateInputError("need at least 2 distinct ring heights")
    rings = np.array([(h, float(np.mean(rs))) for h, rs in merged])
    return ProfileSkeleton(
        axis_point=axis_point,
        axis_direction=direction,
        rings=rings,
        coaxiality_rms=rms,
        bottom_closed=bottom_closed,
    )


def revolve(skeleton: ProfileSkeleton, segments: int) -> TriangleMesh:
    """Watertight surface of revolution: quad strips between rings, fan caps."""
    if segments < 8:
        raise DegenerateInputError(f"segments must be >= 8, got {segments}")
    rings = skeleton.rings
    n_rings = len(rings)
    verts = [skeleton.ring_points(segments)]
    apex_bottom = skeleton.axis_point + rings[0, 0] * skeleton.axis_direction
    apex_top = skeleton.axis_point + rings[-1, 0] * skeleton.axis_direction
    verts.append(apex_bottom[None, :])
    verts.append(apex_top[None, :])
    vertices = np.vstack(verts)
    i_bottom = n_rings * segments
    i_top = i_bottom + 1

    tris = []
    for i in range(n_rings - 1):
        base0 = i * segments
        base1 = (i + 1) * segments
        for j in range(segments):
            jn = (j + 1) % segments
            tris.append((base0 + j, base0 + jn, base1 + jn))
            tris.append((base0 + j, base1 + jn, base1 + j))
    for j in range(segments):
        jn = (j + 1) % segments
        tris.append((i_bottom, rings_idx(0, jn, segments), rings_idx(0, j, segments)))
        top_base = (n_rings - 1) * segments
        tris.append((i_top, top_base + j, top_base + jn))
    mesh = TriangleMesh(vertices, np.array(tris, dtype=np.int64))
    # make the winding outward regardless of axis direction handedness
    from .mesh import _signed_volume_mm3  # local import avoids a public helper

    if _signed_volume_mm3(mesh.vertices, mesh.triangles) < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, [0, 2, 1]])
    return mesh


def rings_idx(ring: int, j: int, segments: int) -> int:
    return ring * segments + j


def skeleton_hull_volume(skeleton: ProfileSkeleton, segments: int):
    """Convex hull of the sampled circle stack and its enclosed volume (cm³)."""
    if segments < 8:
        raise DegenerateInputError(f"segments must be >= 8, got {segments}")
    pts = skeleton.ring_points(segments)
    hull = convex_hull(pts)
    return hull, enclosed_volume(hull)


def revolve_volume(skeleton: ProfileSkeleton, segments: int) -> float:
    """Enclosed volume (cm³) of the revolved skeleton."""
    return enclosed_volume(revolve(skeleton, segments))


def skeleton_analytic_volume(skeleton: ProfileSkeleton) -> float:
    """pi * integral of r(z)^2 dz with r linear between rings, in cm³."""
    rings = skeleton.rings
    total = 0.0
    for (h0, r0), (h1, r1) in zip(rings[:-1], rings[1:]):
        total += (h1 - h0) * (r0 * r0 + r0 * r1 + r1 * r1) / 3.0
    return math.pi * total / 1000.0


def hull_excess_percent(hull_volume: float, revolve_vol: float) -> float:
    """How much the convex hull overestimates the revolved solid, in percent."""
    if revolve_vol <= 0:
        raise DegenerateInputError("revolve volume must be positive")
    return 100.0 * (hull_volume - revolve_vol) / revolve_vol


def skeleton_to_csv(skeleton: ProfileSkeleton, path) -> None:
    """Profile-drawing export: one "height_mm,radius_mm" row per ring."""
    with open(path, "w", newline="\n") as fh:
        fh.write("height_mm,radius_mm\n")
        for h, r in skeleton.rings:
            fh.write(f"{float(h)!r},{float(r)!r}\n")


def skeleton_from_csv(path, axis_point=(0.0, 0.0, 0.0), axis_direction=(0.0, 0.0, 1.0),
                      coaxiality_rms: float = 0.0) -> ProfileSkeleton:
    rings = []
    with open(path) as fh:
        header = fh.readline()
        if header.strip() != "height_mm,radius_mm":
            raise DegenerateInputError("unexpected skeleton CSV header")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            h, r = line.split(",")
            rings.append((float(h), float(r)))
    return ProfileSkeleton(
        axis_point=np.asarray(axis_point, dtype=np.float64),
        axis_direction=np.asarray(axis_direction, dtype=np.float64),
        rings=np.asarray(rings, dtype=np.float64),
        coaxiality_rms=coaxiality_rms,
    )
