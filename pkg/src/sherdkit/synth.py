"""Synthetic test data: primitive solids, parametric vessels, fracturing.

Everything is deterministic given the plan's rng_seed, so fixtures and
acceptance scenarios are exactly reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DegenerateInputError, InvalidMeshError
from .mesh import TriangleMesh, weld_vertices
from .register import RigidTransform


def make_box(size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box, welded and outward-oriented."""
    sx, sy, sz = size
    ox, oy, oz = origin
    v = np.array(
        [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        ],
        dtype=np.float64,
    ) * np.array([sx, sy, sz]) + np.array([ox, oy, oz])
    quads = [
        (0, 3, 2, 1),  # bottom (z=0), outward -z
        (4, 5, 6, 7),  # top
        (0, 1, 5, 4),  # y=0
        (2, 3, 7, 6),  # y=1
        (1, 2, 6, 5),  # x=1
        (3, 0, 4, 7),  # x=0
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return TriangleMesh(v, np.array(tris, dtype=np.int64))


def icosphere(radius: float = 1.0, subdivisions: int = 2, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere from a subdivided icosahedron."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts[0])
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = (verts[i] + verts[j]) / 2.0
            m = m / np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(m)
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.array(faces, dtype=np.int64))


@dataclass(frozen=True)
class VesselProfile:
    """Control rows (height, outer radius, wall thickness) in mm + angular segments."""

    control: Tuple[Tuple[float, float, float], ...]
    segments: int = 64

    def __post_init__(self):
        rows = tuple((float(h), float(r), float(t)) for h, r, t in self.control)
        if len(rows) < 2:
            raise DegenerateInputError("profile needs at least 2 control rows")
        heights = [h for h, _, _ in rows]
        if not all(b > a for a, b in zip(heights, heights[1:])):
            raise DegenerateInputError("control heights must be strictly increasing")
        for h, r, t in rows:
            if not (r > t > 0):
                raise DegenerateInputError(
                    f"need outer radius > wall thickness > 0, got r={r}, t={t} at h={h}"
                )
        if self.segments < 8:
            raise DegenerateInputError("segments must be >= 8")
        object.__setattr__(self, "control", rows)


def _profile_arrays(profile: VesselProfile):
    rows = np.asarray(profile.control, dtype=np.float64)
    return rows[:, 0], rows[:, 1], rows[:, 2]


def _revolution_integral(heights, radii) -> float:
    """pi * integral r(z)^2 dz with r linear in z, in mm³."""
    total = 0.0
    for (h0, r0), (h1, r1) in zip(
        zip(heights[:-1], radii[:-1]), zip(heights[1:], radii[1:])
    ):
        total += (h1 - h0) * (r0 * r0 + r0 * r1 + r1 * r1) / 3.0
    return math.pi * total


def generate_vessel(profile: VesselProfile):
    """Watertight double-walled vessel of revolution.

    Returns (mesh, capacity_cm3, wall_cm3): the analytic interior capacity
    (what the vessel holds, up to the rim plane) and the analytic wall
    material volume, which is exactly what the closed mesh encloses.
    """
    heights, outer_r, wall = _profile_arrays(profile)
    inner_r = outer_r - wall
    base_t = wall[0]
    cavity_bottom = heights[0] + base_t
    if cavity_bottom >= heights[-1]:
        raise DegenerateInputError("base thickness consumes the whole vessel height")
    # inner profile: same control heights clipped to the cavity, radius = outer - wall
    inner_h = [cavity_bottom]
    inner_rad = [float(np.interp(cavity_bottom, heights, inner_r))]
    for h, r in zip(heights, inner_r):
        if h > cavity_bottom + 1e-12:
            inner_h.append(h)
            inner_rad.append(r)
    inner_h = np.asarray(inner_h)
    inner_rad = np.asarray(inner_rad)

    seg = profile.segments
    phi = np.arange(seg) * (2.0 * math.pi / seg)
    cos_p, sin_p = np.cos(phi), np.sin(phi)

    def ring(h, r):
        return np.column_stack([r * cos_p, r * sin_p, np.full(seg, h)])

    verts: List[np.ndarray] = []
    for h, r in zip(heights, outer_r):
        verts.append(ring(h, r))
    n_outer = len(heights)
    for h, r in zip(inner_h[::-1], inner_rad[::-1]):  # rim downward into the cavity
        verts.append(ring(h, r))
    n_inner = len(inner_h)
    vertices = np.vstack(verts + [
        np.array([[0.0, 0.0, heights[0]]]),       # bottom apex
        np.array([[0.0, 0.0, cavity_bottom]]),    # cavity floor apex
    ])
    i_bottom = (n_outer + n_inner) * seg
    i_floor = i_bottom + 1

    tris: List[Tuple[int, int, int]] = []

    def strip(base0, base1):
        for j in range(seg):
            jn = (j + 1) % seg
            tris.append((base0 + j, base0 + jn, base1 + jn))
            tris.append((base0 + j, base1 + jn, base1 + j))

    # outer wall, bottom to top, outward
    for i in range(n_outer - 1):
        strip(i * seg, (i + 1) * seg)
    # rim annulus: top outer ring -> first inner ring (inner stack starts at rim)
    strip((n_outer - 1) * seg, n_outer * seg)
    # inner wall, rim down to cavity floor (rings stored top-down)
    for i in range(n_inner - 1):
        strip((n_outer + i) * seg, (n_outer + i + 1) * seg)
    # bottom cap (outward -z): fan around bottom apex
    for j in range(seg):
        jn = (j + 1) % seg
        tris.append((i_bottom, jn, j))
    # cavity floor (faces up into the cavity): fan around floor apex
    floor_base = (n_outer + n_inner - 1) * seg
    for j in range(seg):
        jn = (j + 1) % seg
        tris.append((i_floor, floor_base + j, floor_base + jn))

    mesh = weld_vertices(TriangleMesh(vertices, np.array(tris, dtype=np.int64)), 1e-9)
    capacity_mm3 = _revolution_integral(inner_h, inner_rad)
    outer_mm3 = _revolution_integral(heights, outer_r)
    wall_mm3 = outer_mm3 - capacity_mm3
    return mesh, capacity_mm3 / 1000.0, wall_mm3 / 1000.0


@dataclass(frozen=True)
class FracturePlan:
    """Surface-Voronoi fracture parameters, fully determined by rng_seed."""

    seed_count: int
    rng_seed: int = 0
    noise_sigma: float = 0.0
    dropout: float = 0.0  # fraction of each sherd's triangles lost to abrasion
    scatter: bool = False
    scatter_translation: float = 30.0  # mm, max random offset per sherd
    scatter_rotation: float = math.pi  # rad, max random rotation per sherd

    def __post_init__(self):
        if self.seed_count < 2:
            raise DegenerateInputError("seed_count must be >= 2")
        if self.noise_sigma < 0:
            raise DegenerateInputError("noise_sigma must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise DegenerateInputError("dropout must be in [0, 1)")


def _sample_surface(mesh: TriangleMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    v = mesh.vertices
    t = mesh.triangles
    cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    probs = areas / areas.sum()
    tri_idx = rng.choice(len(t), size=count, p=probs)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    a = v[t[tri_idx, 0]]
    b = v[t[tri_idx, 1]]
    c = v[t[tri_idx, 2]]
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c


def fracture(mesh: TriangleMesh, plan: FracturePlan):
    """Break a watertight mesh into open sherd shells.

    Seed points are sampled uniformly on the surface; each triangle goes to
    its 3D-nearest seed. Optional normal-direction Gaussian noise and random
    scatter poses are applied; the applied pose per sherd is returned so
    tests can undo it.
    """
    if plan.seed_count > mesh.triangle_count:
        raise DegenerateInputError("seed_count exceeds triangle count")
    rng = np.random.default_rng(plan.rng_seed)
    seeds = _sample_surface(mesh, plan.seed_count, rng)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    d2 = ((centroids[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
    owner = np.argmin(d2, axis=1)

    vertex_normals = mesh.vertex_normals()
    out = []
    for s in range(plan.seed_count):
        tris = mesh.triangles[owner == s]
        if not len(tris):
            continue
        if plan.dropout > 0:
            keep = max(int(round(len(tris) * (1.0 - plan.dropout))), 1)
            sel = rng.choice(len(tris), size=keep, replace=False)
            tris = tris[np.sort(sel)]
        used = np.unique(tris)
        remap = np.zeros(mesh.vertex_count, dtype=np.int64)
        remap[used] = np.arange(len(used))
        verts = mesh.vertices[used].copy()
        if plan.noise_sigma > 0:
            verts = verts + vertex_normals[used] * rng.normal(
                0.0, plan.noise_sigma, size=len(used)
            )[:, None]
        pose = RigidTransform.identity()
        if plan.scatter:
            axis = rng.normal(size=3)
            angle = rng.uniform(-plan.scatter_rotation, plan.scatter_rotation)
            offset = rng.uniform(-plan.scatter_translation, plan.scatter_translation, size=3)
            pose = RigidTransform.from_axis_angle(axis, angle, offset)
            verts = pose.apply(verts)
        out.append((TriangleMesh(verts, remap[tris]), pose))
    return out


def band_split(sherd: TriangleMesh, direction) -> Tuple[TriangleMesh, TriangleMesh]:
    """Split a double-walled sherd into inner and outer sheets.

    Triangles are classified by how their normal relates to the outward
    radial direction about the given axis; mostly-axial triangles (rim and
    base bands) belong to neither sheet and are dropped.
    """
    d = np.asarray(direction, dtype=np.float64)
    length = np.linalg.norm(d)
    if length == 0:
        raise DegenerateInputError("direction must be nonzero")
    d = d / length
    centroids = sherd.vertices[sherd.triangles].mean(axis=1)
    radial = centroids - np.outer(centroids @ d, d)
    radial_len = np.linalg.norm(radial, axis=1)
    radial_len[radial_len == 0] = 1.0
    radial = radial / radial_len[:, None]
    normals = sherd.face_normals()
    radial_dot = np.einsum("ij,ij->i", normals, radial)
    axial_dot = normals @ d
    is_rim = np.abs(axial_dot) > np.abs(radial_dot)
    outer_sel = (~is_rim) & (radial_dot > 0)
    inner_sel = (~is_rim) & (radial_dot <= 0)
    if not outer_sel.any() or not inner_sel.any():
        raise DegenerateInputError("band split produced an empty side")

    def extract(sel):
        tris = sherd.triangles[sel]
        used = np.unique(tris)
        remap = np.zeros(sherd.vertex_count, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriangleMesh(sherd.vertices[used], remap[tris])

    return extract(inner_sel), extract(outer_sel)


def write_scenario_manifest(path, profile: VesselProfile, plan: FracturePlan,
                            sherds, capacity_cm3: float, wall_cm3: float) -> None:
    """Ground-truth manifest (poses + analytic volumes) for a fracture scenario."""
    doc = {
        "profile": {
            "control": [list(row) for row in profile.control],
            "segments": profile.segments,
        },
        "fracture": {
            "seed_count": plan.seed_count,
            "rng_seed": plan.rng_seed,
            "noise_sigma": plan.noise_sigma,
            "dropout": plan.dropout,
            "scatter": plan.scatter,
        },
        "capacity_cm3": capacity_cm3,
        "wall_cm3": wall_cm3,
        "sherds": [
            {"index": i, "true_pose": pose.to_dict(), "triangles": mesh.triangle_count}
            for i, (mesh, pose) in enumerate(sherds)
        ],
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
