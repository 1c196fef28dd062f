"""Rigid poses and registration: constrained Z alignment and point-to-point ICP.

The Z alignment reproduces the inner/outer shell merge: both shells sit with
the vessel axis along Z, so the only free parameters are a rotation about Z
and a slide along Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial import cKDTree

from .distance import surface_samples
from .errors import RegistrationError
from .mesh import TriangleMesh

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (3x3, det +1) plus translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64))
        if r.shape != (3, 3):
            raise RegistrationError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise RegistrationError(f"translation must be a 3-vector, got {t.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(r) - 1) > 1e-6:
            raise RegistrationError("rotation must be orthonormal with det +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        a = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(a)
        if norm == 0:
            raise RegistrationError("rotation axis must be nonzero")
        x, y, z = a / norm
        k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
        r = np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)
        return RigidTransform(_orthonormalize(r), np.asarray(translation, dtype=np.float64))

    @staticmethod
    def rotation_z(theta: float, dz: float = 0.0) -> "RigidTransform":
        return RigidTransform.from_axis_angle((0, 0, 1), theta, (0.0, 0.0, dz))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_mesh(self, mesh: TriangleMesh) -> TriangleMesh:
        return mesh.with_vertices(self.apply(mesh.vertices))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then self."""
        return RigidTransform(
            _orthonormalize(self.rotation @ other.rotation),
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def angle(self) -> float:
        """Rotation angle in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return math.acos(min(1.0, max(-1.0, c)))

    def to_dict(self):
        return {
            "rotation": [[float(x) for x in row] for row in self.rotation],
            "translation": [float(x) for x in self.translation],
        }

    @staticmethod
    def from_dict(data) -> "RigidTransform":
        return RigidTransform(
            np.asarray(data["rotation"], dtype=np.float64),
            np.asarray(data["translation"], dtype=np.float64),
        )


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


@dataclass(frozen=True)
class ZAlignment:
    """Best (rotation about Z, slide along Z) for a shell pair."""

    theta: float  # radians in [0, 2*pi)
    dz: float  # mm
    mean_residual: float  # mm
    theta_degenerate: bool = False  # residual flat in theta (symmetric shape)

    def transform(self) -> RigidTransform:
        return RigidTransform.rotation_z(self.theta, self.dz)

    def to_dict(self):
        return {
            "theta_rad": self.theta,
            "dz_mm": self.dz,
            "mean_residual_mm": self.mean_residual,
            "theta_degenerate": self.theta_degenerate,
        }


def _subsample(points: np.ndarray, cap: int) -> np.ndarray:
    if len(points) <= cap:
        return points
    step = int(math.ceil(len(points) / cap))
    return points[::step]


def _rotate_z(points: np.ndarray, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    out = points.copy()
    out[:, 0] = c * points[:, 0] - s * points[:, 1]
    out[:, 1] = s * points[:, 0] + c * points[:, 1]
    return out


def align_z(
    moving: TriangleMesh,
    fixed: TriangleMesh,
    theta_steps: int = 360,
    dz_range=(-10.0, 10.0),
    dz_steps: int = 100,
    subsample: int = 5000,
    surface_spacing: Optional[float] = None,
) -> ZAlignment:
    """Exhaustive (theta, dz) grid search + local refinement.

    Minimizes the mean nearest-neighbor distance from (subsampled) moving
    vertices to a dense deterministic sampling of the fixed surface
    (spacing defaults to 1/100 of the fixed bounding-box diagonal). The
    argmin tie-break is lowest theta, then lowest dz, so parallel
    evaluation order cannot change the result.
    """
    if theta_steps < 8:
        raise RegistrationError(f"theta_steps must be >= 8, got {theta_steps}")
    lo, hi = float(dz_range[0]), float(dz_range[1])
    if not (hi >= lo) or dz_steps < 1:
        raise RegistrationError(f"empty dz range {dz_range!r}")
    if not moving.vertex_count or not fixed.vertex_count:
        raise RegistrationError("both meshes must be non-empty")
    pts = _subsample(moving.vertices, subsample)
    # the exhaustive grid only needs to land in the right basin; a coarser
    # point subset keeps it fast, and refinement below uses the full subset
    grid_pts = _subsample(pts, min(len(pts), 1000))
    if surface_spacing is None:
        blo, bhi = fixed.bounding_box()
        surface_spacing = max(float(np.linalg.norm(bhi - blo)) / 100.0, 1e-9)
    tree = cKDTree(surface_samples(fixed, surface_spacing))
    # distances are truncated at a cap: far-away points contribute a constant,
    # which keeps badly misaligned poses cheap to evaluate and makes the
    # objective robust to partial overlap
    cap = 20.0 * surface_spacing
    thetas = np.arange(theta_steps) * (2.0 * math.pi / theta_steps)
    dzs = np.linspace(lo, hi, dz_steps) if dz_steps > 1 else np.array([lo])
    residuals = np.empty((len(thetas), len(dzs)))
    n = len(grid_pts)
    for i, theta in enumerate(thetas):
        rot = _rotate_z(grid_pts, theta)
        batch = np.repeat(rot[None, :, :], len(dzs), axis=0)
        batch[:, :, 2] += dzs[:, None]
        d, _ = tree.query(batch.reshape(-1, 3), workers=-1,
                          distance_upper_bound=cap)
        residuals[i] = np.minimum(d, cap).reshape(len(dzs), n).mean(axis=1)
    flat_best = int(np.argmin(residuals))
    bi, bj = divmod(flat_best, len(dzs))
    best_theta = float(thetas[bi])
    best_dz = float(dzs[bj])

    per_theta_best = residuals.min(axis=1)
    mean_res = float(per_theta_best.mean())
    spread = float(per_theta_best.max() - per_theta_best.min())
    # theta is unresolved when the profile is flat relative to its level, or
    # when all variation sits below the resolution of the sampled objective
    degenerate = bool(spread < max(0.01 * mean_res, 0.5 * surface_spacing))

    def objective(theta, dz):
        rot = _rotate_z(pts, theta)
        rot[:, 2] += dz
        d, _ = tree.query(rot, workers=-1, distance_upper_bound=cap)
        return float(np.minimum(d, cap).mean())

    best = objective(best_theta, best_dz)
    step_theta = 2.0 * math.pi / theta_steps
    step_dz = (hi - lo) / max(dz_steps - 1, 1) if hi > lo else 0.0
    while step_theta > 1e-5 or step_dz > 1e-4:
        improved = False
        for dt, dd in ((step_theta, 0.0), (-step_theta, 0.0), (0.0, step_dz), (0.0, -step_dz)):
            if dt == 0.0 and dd == 0.0:
                continue
            cand = objective(best_theta + dt, best_dz + dd)
            if cand < best - 1e-15:
                best = cand
                best_theta += dt
                best_dz += dd
                improved = True
        if not improved:
            step_theta = step_theta / 2.0 if step_theta > 1e-5 else step_theta
            step_dz = step_dz / 2.0 if step_dz > 1e-4 else step_dz
            if step_theta <= 1e-5 and step_dz <= 1e-4:
                break
    return ZAlignment(
        theta=best_theta % (2.0 * math.pi),
        dz=best_dz,
        mean_residual=best,
        theta_degenerate=degenerate,
    )


@dataclass
class IcpResult:
    """Final pose plus convergence trace. Unpacks as (transform, rms)."""

    transform: RigidTransform
    rms: float
    iterations: int
    rms_history: List[float] = field(default_factory=list)
    converged: bool = False

    def __iter__(self):
        return iter((self.transform, self.rms))


def icp_rigid(
    moving,
    fixed: TriangleMesh,
    seed: Optional[RigidTransform] = None,
    max_iterations: int = 50,
    convergence_mm: float = 1e-6,
    rejection_radius: Optional[float] = None,
) -> IcpResult:
    """Point-to-point ICP against the fixed mesh's vertex set.

    Correspondences beyond the rejection radius (default 10x the fixed
    cloud's median nearest-neighbor spacing) are dropped each iteration.
    The optimal rigid update uses the centroid-aligned cross-covariance
    SVD; the rotation is re-orthonormalized every step.
    """
    pts = moving.vertices if isinstance(moving, TriangleMesh) else np.asarray(moving, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or not len(pts):
        raise RegistrationError("moving point set must be non-empty (n, 3)")
    if not fixed.vertex_count:
        raise RegistrationError("fixed mesh is empty")
    seed = seed or RigidTransform.identity()
    tree = cKDTree(fixed.vertices)
    if rejection_radius is None:
        if fixed.vertex_count >= 2:
            d2, _ = tree.query(fixed.vertices, k=2, workers=-1)
            spacing = float(np.median(d2[:, 1]))
        else:
            spacing = 1.0
        rejection_radius = 10.0 * max(spacing, 1e-12)

    pose = seed
    history: List[float] = []
    prev_rms = None
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        current = pose.apply(pts)
        d, idx = tree.query(current, workers=-1)
        mask = d <= rejection_radius
        if not mask.any():
            raise RegistrationError(
                f"no correspondences within rejection radius {rejection_radius:.3g} mm"
            )
        src = pts[mask]
        dst = fixed.vertices[idx[mask]]
        cs = src.mean(axis=0)
        cd = dst.mean(axis=0)
        h = (src - cs).T @ (dst - cd)
        u, _, vt = np.linalg.svd(h)
        r = vt.T @ u.T
        if np.linalg.det(r) < 0:
            vt[-1] = -vt[-1]
            r = vt.T @ u.T
        r = _orthonormalize(r)
        t = cd - r @ cs
        pose = RigidTransform(r, t)
        d_new = np.linalg.norm(pose.apply(src) - dst, axis=1)
        rms = float(np.sqrt(np.mean(d_new**2)))
        history.append(rms)
        if rms < convergence_mm:
            converged = True
            break
        if prev_rms is not None and abs(prev_rms - rms) < convergence_mm:
            converged = True
            break
        prev_rms = rms
    return IcpResult(
        transform=pose,
        rms=history[-1],
        iterations=iterations,
        rms_history=history,
        converged=converged,
    )


def merge_shells(inner: TriangleMesh, outer: TriangleMesh, alignment: ZAlignment) -> TriangleMesh:
    """Apply the Z alignment to the inner shell and concatenate both meshes.

    No welding or boolean merge happens here: the combined open sheets feed
    straight into implicit reconstruction, which closes the gap.
    """
    moved = alignment.transform().apply_mesh(inner)
    verts = np.vstack([moved.vertices, outer.vertices])
    tris = np.vstack([moved.triangles, outer.triangles + moved.vertex_count])
    return TriangleMesh(verts, tris)
