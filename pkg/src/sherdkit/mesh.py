"""Triangle mesh core: data types, diagnostics, volume, hull, smoothing.

All coordinates are millimetres; volumes are reported in cm³.
Meshes are immutable value objects — operations return new meshes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _graph_components
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DegenerateInputError,
    InvalidMeshError,
    NotWatertightError,
    OrientationError,
)

DEFAULT_WELD_TOLERANCE = 1e-4  # mm; spatial-hash cell size for vertex welding


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface. Vertices in mm, triangle indices 0-based."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise InvalidMeshError(f"vertices must be (n, 3), got {verts.shape}")
        if tris.size == 0:
            tris = tris.reshape(0, 3)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise InvalidMeshError(f"triangles must be (m, 3), got {tris.shape}")
        if not np.isfinite(verts).all():
            raise InvalidMeshError("vertex coordinates must be finite")
        if tris.size:
            if tris.min() < 0 or tris.max() >= len(verts):
                raise InvalidMeshError("triangle index out of range")
            if (
                (tris[:, 0] == tris[:, 1])
                | (tris[:, 1] == tris[:, 2])
                | (tris[:, 0] == tris[:, 2])
            ).any():
                raise InvalidMeshError("triangle repeats a vertex index")
        norms = self.normals
        if norms is not None:
            norms = np.ascontiguousarray(np.asarray(norms, dtype=np.float64))
            if norms.shape != verts.shape:
                raise InvalidMeshError("normals must match vertices in shape")
        for arr in (verts, tris, norms):
            if arr is not None:
                arr.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "normals", norms)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            z = np.zeros(3)
            return z, z
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """Same connectivity, new vertex positions (normals dropped)."""
        return TriangleMesh(vertices, self.triangles)

    def translated(self, offset) -> "TriangleMesh":
        return self.with_vertices(self.vertices + np.asarray(offset, dtype=np.float64))

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        if normalize:
            lens = np.linalg.norm(n, axis=1)
            lens[lens == 0] = 1.0
            n = n / lens[:, None]
        return n

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted average of incident face normals, unit length."""
        n = np.zeros_like(self.vertices)
        fn = self.face_normals(normalize=False)  # area-weighted
        for k in range(3):
            np.add.at(n, self.triangles[:, k], fn)
        lens = np.linalg.norm(n, axis=1)
        lens[lens == 0] = 1.0
        return n / lens[:, None]


@dataclass(frozen=True)
class MeshDiagnostics:
    """Connectivity and closure report for one mesh."""

    vertex_count: int
    triangle_count: int
    boundary_edge_count: int
    connected_components: int
    is_watertight: bool
    is_orientable: bool
    bounding_box: Tuple[Tuple[float, float, float], Tuple[float, float, float]]


@dataclass
class MetricsRecord:
    """One row of the per-vessel metrics report."""

    name: str
    surface_count: int
    vertex_count: int
    volume_cm3: float
    photo_count: Optional[int] = None
    point_count: Optional[int] = None
    calculation_time: Optional[str] = None
    hull_excess_percent: Optional[float] = None

    def __post_init__(self):
        if self.volume_cm3 < 0:
            raise ValueError("volume_cm3 must be non-negative")
        for label, value in (
            ("surface_count", self.surface_count),
            ("vertex_count", self.vertex_count),
            ("photo_count", self.photo_count),
            ("point_count", self.point_count),
        ):
            if value is not None and value < 0:
                raise ValueError(f"{label} must be non-negative")


def weld_vertices(mesh: TriangleMesh, tolerance: float = DEFAULT_WELD_TOLERANCE) -> TriangleMesh:
    """Merge vertices closer than `tolerance` (grid quantization hash).

    Triangles that collapse to fewer than 3 distinct vertices are dropped.
    """
    if tolerance <= 0:
        raise ValueError("weld tolerance must be positive")
    keys = np.round(mesh.vertices / tolerance).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    verts = mesh.vertices[first]
    # np.unique sorts; inverse already points at the sorted representatives
    tris = inverse[mesh.triangles]
    keep = (
        (tris[:, 0] != tris[:, 1])
        & (tris[:, 1] != tris[:, 2])
        & (tris[:, 0] != tris[:, 2])
    )
    return TriangleMesh(verts, tris[keep])


def _edge_counts(triangles: np.ndarray):
    """Undirected edge table -> (unique_edges, per-edge incident triangle count)."""
    e = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    e_sorted = np.sort(e, axis=1)
    uniq, counts = np.unique(e_sorted, axis=0, return_counts=True)
    return uniq, counts


def _is_orientable(triangles: np.ndarray, n_vertices: int) -> bool:
    """Propagate windings across manifold edges; orientable iff no contradiction."""
    if not len(triangles):
        return True
    if _is_consistently_oriented(triangles):
        return True
    flips, ok = _propagation_flips(triangles)
    return ok


def _propagation_flips(triangles: np.ndarray):
    """BFS triangle-winding propagation.

    Returns (flip flags per triangle, no-contradiction flag). Only edges shared
    by exactly two triangles carry constraints.
    """
    m = len(triangles)
    edges = {}
    for ti in range(m):
        a, b, c = triangles[ti]
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edges.setdefault(key, []).append((ti, u < v))
    # adjacency with relative-orientation parity: same directed sense => one must flip
    adj = [[] for _ in range(m)]
    for incidents in edges.values():
        if len(incidents) != 2:
            continue
        (t1, fwd1), (t2, fwd2) = incidents
        same_direction = fwd1 == fwd2
        adj[t1].append((t2, same_direction))
        adj[t2].append((t1, same_direction))
    flips = np.full(m, -1, dtype=np.int8)
    ok = True
    for start in range(m):
        if flips[start] != -1:
            continue
        flips[start] = 0
        stack = [start]
        while stack:
            ti = stack.pop()
            for tj, same_direction in adj[ti]:
                want = flips[ti] ^ (1 if same_direction else 0)
                if flips[tj] == -1:
                    flips[tj] = want
                    stack.append(tj)
                elif flips[tj] != want:
                    ok = False
    return flips.astype(bool), ok


def diagnose(mesh: TriangleMesh, weld_tolerance: float = DEFAULT_WELD_TOLERANCE) -> MeshDiagnostics:
    """Closure/connectivity diagnostics; edge topology computed after welding."""
    welded = weld_vertices(mesh, weld_tolerance)
    tris = welded.triangles
    if len(tris):
        uniq, counts = _edge_counts(tris)
        boundary = int((counts == 1).sum())
        row = uniq[:, 0]
        col = uniq[:, 1]
        n = welded.vertex_count
        g = coo_matrix((np.ones(len(uniq)), (row, col)), shape=(n, n))
        ncomp, labels = _graph_components(g, directed=False)
        used = np.zeros(n, dtype=bool)
        used[tris.ravel()] = True
        components = len(np.unique(labels[used]))
        orientable = _is_orientable(tris, n)
    else:
        boundary = 0
        components = 0
        orientable = True
    lo, hi = mesh.bounding_box()
    return MeshDiagnostics(
        vertex_count=mesh.vertex_count,
        triangle_count=mesh.triangle_count,
        boundary_edge_count=boundary,
        connected_components=components,
        is_watertight=boundary == 0 and len(tris) > 0,
        is_orientable=orientable,
        bounding_box=(tuple(lo), tuple(hi)),
    )


def _is_consistently_oriented(triangles: np.ndarray) -> bool:
    """True iff every interior edge is traversed once in each direction."""
    e = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool((counts == 1).all())


def _signed_volume_mm3(vertices: np.ndarray, triangles: np.ndarray) -> float:
    # centering improves conditioning; the signed sum is translation-invariant
    v = vertices - vertices.mean(axis=0)
    t = triangles
    return float(
        np.einsum("ij,ij->i", v[t[:, 0]], np.cross(v[t[:, 1]], v[t[:, 2]])).sum() / 6.0
    )


def enclosed_volume(mesh: TriangleMesh, weld_tolerance: float = DEFAULT_WELD_TOLERANCE) -> float:
    """Volume enclosed by a watertight, consistently oriented mesh, in cm³.

    Divergence-theorem sum of signed tetrahedra; refuses open or
    inconsistently wound meshes.
    """
    welded = weld_vertices(mesh, weld_tolerance)
    diag = diagnose(mesh, weld_tolerance)
    if not diag.is_watertight:
        raise NotWatertightError(
            f"mesh has {diag.boundary_edge_count} boundary edges; "
            "volume requires a closed surface",
            diagnostics=diag,
        )
    if not _is_consistently_oriented(welded.triangles):
        raise OrientationError(
            "triangle windings are inconsistent; run orient_consistently() first"
        )
    return abs(_signed_volume_mm3(welded.vertices, welded.triangles)) / 1000.0


def orient_consistently(
    mesh: TriangleMesh, weld_tolerance: float = DEFAULT_WELD_TOLERANCE
) -> TriangleMesh:
    """Flip triangles so windings agree across shared edges, outward for closed parts.

    Closed connected components are flipped wholesale if their signed volume
    comes out negative, so outward orientation is restored as well.
    """
    welded_idx = _weld_index(mesh, weld_tolerance)
    tris_w = welded_idx[mesh.triangles]
    flips, ok = _propagation_flips(tris_w)
    if not ok:
        raise OrientationError("mesh is non-orientable; cannot fix windings")
    tris = mesh.triangles.copy()
    tris[flips] = tris[flips][:, [0, 2, 1]]
    tris_w2 = welded_idx[tris]
    # outward fix per closed component
    comp = _triangle_components(tris_w2)
    for label in np.unique(comp):
        sel = comp == label
        sub = tris_w2[sel]
        _, counts = _edge_counts(sub)
        if (counts == 1).any():
            continue  # open sheet: propagated winding is the best we can do
        if _signed_volume_mm3(mesh.vertices, tris[sel]) < 0:
            tris[sel] = tris[sel][:, [0, 2, 1]]
    return TriangleMesh(mesh.vertices, tris)


def _weld_index(mesh: TriangleMesh, tolerance: float) -> np.ndarray:
    keys = np.round(mesh.vertices / tolerance).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse


def _triangle_components(triangles: np.ndarray) -> np.ndarray:
    """Label triangles by connected component of the vertex graph they touch."""
    n = int(triangles.max()) + 1 if len(triangles) else 0
    uniq, _ = _edge_counts(triangles)
    g = coo_matrix((np.ones(len(uniq)), (uniq[:, 0], uniq[:, 1])), shape=(n, n))
    _, labels = _graph_components(g, directed=False)
    return labels[triangles[:, 0]]


def split_components(mesh: TriangleMesh, weld_tolerance: float = DEFAULT_WELD_TOLERANCE):
    """Split into connected components (largest first), re-indexed meshes."""
    welded_idx = _weld_index(mesh, weld_tolerance)
    labels = _triangle_components(welded_idx[mesh.triangles])
    out = []
    for label in np.unique(labels):
        tris = mesh.triangles[labels == label]
        used = np.unique(tris)
        remap = np.zeros(mesh.vertex_count, dtype=np.int64)
        remap[used] = np.arange(len(used))
        out.append(TriangleMesh(mesh.vertices[used], remap[tris]))
    out.sort(key=lambda m: m.triangle_count, reverse=True)
    return out


def convex_hull(points) -> TriangleMesh:
    """Watertight, outward-oriented convex hull of a 3D point set.

    Degenerate inputs (all points within epsilon of a point, line or plane)
    raise DegenerateInputError naming the detected dimension.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DegenerateInputError("points must be an (n, 3) array")
    if len(pts) < 4:
        raise DegenerateInputError(
            f"need at least 4 points for a 3D hull, got {len(pts)}"
        )
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    diagonal = float(np.linalg.norm(hi - lo))
    eps = 1e-9 * diagonal
    centered = pts - pts.mean(axis=0)
    # rms extent along each principal axis
    svals = np.linalg.svd(centered, compute_uv=False) / np.sqrt(len(pts))
    rank = int((svals > max(eps, 1e-300)).sum())
    if rank < 3:
        name = {0: "point", 1: "collinear", 2: "coplanar"}[rank]
        raise DegenerateInputError(
            f"input is degenerate ({name}, affine dimension {rank})", dimension=rank
        )
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:  # near-degenerate inputs that slipped the rank check
        raise DegenerateInputError(f"hull construction failed: {exc}") from exc
    used = hull.vertices
    remap = np.zeros(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    tris = remap[hull.simplices]
    verts = pts[used]
    # qhull simplices are not consistently wound; align with outward equations
    normals = np.cross(
        verts[tris[:, 1]] - verts[tris[:, 0]], verts[tris[:, 2]] - verts[tris[:, 0]]
    )
    flip = np.einsum("ij,ij->i", normals, hull.equations[:, :3]) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return TriangleMesh(verts, tris)


def laplacian_smooth(mesh: TriangleMesh, iterations: int, lam: float) -> TriangleMesh:
    """Move each vertex toward the centroid of its edge neighbors by `lam` per pass."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0 or not len(mesh.triangles):
        return mesh
    uniq, _ = _edge_counts(mesh.triangles)
    i = np.concatenate([uniq[:, 0], uniq[:, 1]])
    j = np.concatenate([uniq[:, 1], uniq[:, 0]])
    degree = np.zeros(mesh.vertex_count)
    np.add.at(degree, i, 1.0)
    safe_degree = np.where(degree > 0, degree, 1.0)
    verts = mesh.vertices.copy()
    for _ in range(iterations):
        acc = np.zeros_like(verts)
        np.add.at(acc, i, verts[j])
        centroid = acc / safe_degree[:, None]
        moved = verts + lam * (centroid - verts)
        verts = np.where((degree > 0)[:, None], moved, verts)
    return TriangleMesh(verts, mesh.triangles)
