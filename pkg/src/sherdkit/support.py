"""3D-printable display support generation.

The support is a shelled copy of the reconstructed vessel with recessed
imprints where the real fragments sit, optionally engraved with a label,
and split into parts that fit a printer build volume. All boolean work
happens in voxel space for robustness on reconstructed surfaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import NotWatertightError, SupportError
from .implicit import ScalarGrid, extract_isosurface
from .mesh import (
    TriangleMesh,
    _is_consistently_oriented,
    diagnose,
    enclosed_volume,
    laplacian_smooth,
    weld_vertices,
)

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class SupportSpec:
    """Parameters of the display support.

    Defaults match common fused-filament printing: 4 mm shell, 0.4 mm
    fragment clearance, 0.8 mm voxels.
    """

    shell_thickness: float = 4.0
    clearance: float = 0.4
    voxel_size: float = 0.8
    build_volume: Tuple[float, float, float] = (200.0, 200.0, 200.0)
    label_text: str = ""
    label_depth: float = 1.0
    label_region: Optional[Tuple[Sequence[float], Sequence[float]]] = None

    def __post_init__(self):
        if self.shell_thickness <= 0:
            raise SupportError(f"shell_thickness must be > 0, got {self.shell_thickness}")
        if self.clearance < 0:
            raise SupportError(f"clearance must be >= 0, got {self.clearance}")
        if not self.clearance < self.shell_thickness:
            raise SupportError(
                f"clearance ({self.clearance}) must be smaller than the shell "
                f"thickness ({self.shell_thickness})"
            )
        if self.voxel_size <= 0 or self.voxel_size > self.shell_thickness / 3.0:
            raise SupportError(
                f"voxel_size must be in (0, shell_thickness/3], got {self.voxel_size}"
            )
        if len(self.build_volume) != 3 or any(d <= 0 for d in self.build_volume):
            raise SupportError(f"build_volume must be 3 positive extents, got {self.build_volume}")


@dataclass(frozen=True)
class VoxelSolid:
    """Occupancy grid: a ScalarGrid whose values are exactly 0 or 1."""

    grid: ScalarGrid

    def __post_init__(self):
        v = self.grid.values
        if not np.isin(v, (0.0, 1.0)).all():
            raise SupportError("voxel occupancy values must be 0 or 1")

    @property
    def occupancy(self) -> np.ndarray:
        return self.grid.values.astype(bool)

    @property
    def voxel_size(self) -> float:
        return self.grid.spacing

    def count(self) -> int:
        return int(self.grid.values.sum())

    def volume_cm3(self) -> float:
        return self.count() * self.voxel_size**3 / 1000.0

    def with_occupancy(self, occ: np.ndarray) -> "VoxelSolid":
        return VoxelSolid(ScalarGrid(self.grid.origin, self.grid.spacing,
                                     self.grid.dims, occ.astype(np.float64)))

    def to_mesh(self, smooth_iterations: int = 0, smooth_lambda: float = 0.2) -> TriangleMesh:
        """Mesh the occupancy boundary at the 0.5 level, optionally smoothed."""
        mesh = extract_isosurface(self.grid, 0.5)
        if smooth_iterations and mesh.vertex_count:
            mesh = laplacian_smooth(mesh, smooth_iterations, smooth_lambda)
        return mesh


def _require_solid(mesh: TriangleMesh) -> None:
    diag = diagnose(mesh)
    if not diag.is_watertight:
        raise NotWatertightError(
            f"mesh is not watertight ({diag.boundary_edge_count} boundary edges)",
            diag,
        )
    welded = weld_vertices(mesh)
    if not _is_consistently_oriented(welded.triangles):
        raise NotWatertightError("mesh windings are not consistently oriented", diag)


def voxelize(mesh: TriangleMesh, voxel_size: float,
             bounds: Optional[Tuple[Sequence[float], Sequence[float]]] = None) -> VoxelSolid:
    """Occupancy sampling of a watertight mesh: voxel centers inside the mesh.

    Inside/outside comes from crossing parity along +X rays through each
    (y, z) row of voxel centers; rows that graze a vertex or edge are
    re-cast with a deterministic jitter.
    """
    if voxel_size <= 0:
        raise SupportError(f"voxel_size must be > 0, got {voxel_size}")
    _require_solid(mesh)
    mesh = weld_vertices(mesh)
    blo, bhi = mesh.bounding_box()
    if bounds is None:
        lo = np.asarray(blo) - voxel_size
        hi = np.asarray(bhi) + voxel_size
    else:
        lo = np.asarray(bounds[0], dtype=np.float64)
        hi = np.asarray(bounds[1], dtype=np.float64)
        if not (hi > lo).all():
            raise SupportError(f"empty voxel bounds {bounds!r}")
    # half-voxel offset: sample points sit at cell centers, never exactly on
    # axis-aligned faces of grid-aligned geometry
    dims = tuple(int(math.ceil((hi[i] - lo[i]) / voxel_size)) + 2 for i in range(3))
    origin = lo - 0.5 * voxel_size
    occ = np.zeros(dims, dtype=bool)
    if (np.asarray(bhi) < lo).any() or (np.asarray(blo) > hi).any():
        return VoxelSolid(ScalarGrid(origin, voxel_size, dims, occ.astype(np.float64)))

    tri = mesh.vertices[mesh.triangles]  # (t, 3, 3)
    ys = origin[1] + voxel_size * np.arange(dims[1])
    zs = origin[2] + voxel_size * np.arange(dims[2])
    xs = origin[0] + voxel_size * np.arange(dims[0])

    # map each triangle to the (y, z) rows its projection can cover
    ty_lo = tri[:, :, 1].min(axis=1)
    ty_hi = tri[:, :, 1].max(axis=1)
    tz_lo = tri[:, :, 2].min(axis=1)
    tz_hi = tri[:, :, 2].max(axis=1)
    scale = max(float((bhi - blo).max()), voxel_size)
    eps = 1e-9 * scale

    j0 = np.searchsorted(ys, ty_lo - eps, side="left")
    j1 = np.searchsorted(ys, ty_hi + eps, side="right")
    k0 = np.searchsorted(zs, tz_lo - eps, side="left")
    k1 = np.searchsorted(zs, tz_hi + eps, side="right")
    counts = np.maximum(j1 - j0, 0) * np.maximum(k1 - k0, 0)
    keep = np.nonzero(counts > 0)[0]
    pair_tri = []
    pair_row = []
    for t in keep:
        jj = np.arange(j0[t], j1[t])
        kk = np.arange(k0[t], k1[t])
        rows = (jj[:, None] * dims[2] + kk[None, :]).ravel()
        pair_tri.append(np.full(len(rows), t, dtype=np.int64))
        pair_row.append(rows)
    if not pair_tri:
        return VoxelSolid(ScalarGrid(origin, voxel_size, dims, occ.astype(np.float64)))
    pair_tri = np.concatenate(pair_tri)
    pair_row = np.concatenate(pair_row)

    row_y = ys[pair_row // dims[2]]
    row_z = zs[pair_row % dims[2]]
    dirty = np.ones(len(pair_row), dtype=bool)
    hits_row: List[np.ndarray] = []
    hits_x: List[np.ndarray] = []
    jitter = voxel_size * np.array([math.sqrt(2.0) - 1.0, math.sqrt(3.0) - 1.0])
    for attempt in range(8):
        sel = np.nonzero(dirty)[0]
        if not len(sel):
            break
        off = attempt * 0.01 * jitter
        yq = row_y[sel] + off[0]
        zq = row_z[sel] + off[1]
        a = tri[pair_tri[sel], 0]
        b = tri[pair_tri[sel], 1]
        c = tri[pair_tri[sel], 2]
        e1y, e1z = b[:, 1] - a[:, 1], b[:, 2] - a[:, 2]
        e2y, e2z = c[:, 1] - a[:, 1], c[:, 2] - a[:, 2]
        det = e1y * e2z - e1z * e2y
        py, pz = yq - a[:, 1], zq - a[:, 2]
        det_safe = np.where(np.abs(det) > 0, det, 1.0)
        u = (py * e2z - pz * e2y) / det_safe
        v = (e1y * pz - e1z * py) / det_safe
        tol = 1e-9
        grazing = (
            (np.abs(det) <= eps * scale)
            | (np.abs(u) <= tol) | (np.abs(v) <= tol)
            | (np.abs(1.0 - u - v) <= tol)
        )
        inside = (u > tol) & (v > tol) & (u + v < 1.0 - tol) & ~grazing
        hit = np.nonzero(inside)[0]
        if len(hit):
            xi = (
                a[hit, 0]
                + u[hit] * (b[hit, 0] - a[hit, 0])
                + v[hit] * (c[hit, 0] - a[hit, 0])
            )
            hits_row.append(pair_row[sel[hit]])
            hits_x.append(xi)
        # a grazing pair taints its whole row: re-cast every pair of that row
        bad_rows = np.unique(pair_row[sel[np.nonzero(grazing)[0]]])
        done = sel[~np.isin(pair_row[sel], bad_rows)]
        dirty[done] = False
        if len(bad_rows):
            redo = np.isin(pair_row, bad_rows)
            dirty |= redo
            # drop hits already recorded for tainted rows
            for i in range(len(hits_row)):
                keep_mask = ~np.isin(hits_row[i], bad_rows)
                hits_row[i] = hits_row[i][keep_mask]
                hits_x[i] = hits_x[i][keep_mask]
        else:
            dirty[sel] = False
    if not hits_row:
        return VoxelSolid(ScalarGrid(origin, voxel_size, dims, occ.astype(np.float64)))
    all_rows = np.concatenate(hits_row)
    all_x = np.concatenate(hits_x)
    order = np.lexsort((all_x, all_rows))
    all_rows = all_rows[order]
    all_x = all_x[order]
    starts = np.searchsorted(all_rows, np.arange(dims[1] * dims[2]), side="left")
    ends = np.searchsorted(all_rows, np.arange(dims[1] * dims[2]), side="right")
    flat = occ.reshape(dims[0], dims[1] * dims[2])
    for r in np.nonzero(ends > starts)[0]:
        crossings = all_x[starts[r]:ends[r]]
        # odd number of crossings to the right of the center means inside
        right = len(crossings) - np.searchsorted(crossings, xs, side="right")
        flat[:, r] = (right % 2) == 1
    return VoxelSolid(ScalarGrid(origin, voxel_size, dims, occ.astype(np.float64)))


def voxelize_surface(mesh: TriangleMesh, voxel_size: float,
                     bounds: Tuple[Sequence[float], Sequence[float]]) -> VoxelSolid:
    """Occupancy of voxels whose center lies within half a diagonal of the surface.

    Used for open fragment sheets, which have no inside for parity casting.
    """
    from .distance import MeshDistance

    b_lo = np.asarray(bounds[0], dtype=np.float64)
    b_hi = np.asarray(bounds[1], dtype=np.float64)
    dims = tuple(int(math.ceil((b_hi[i] - b_lo[i]) / voxel_size)) + 2 for i in range(3))
    lo = b_lo - 0.5 * voxel_size
    axes = [lo[i] + voxel_size * np.arange(dims[i]) for i in range(3)]
    blo, bhi = mesh.bounding_box()
    pad = voxel_size
    sel = [
        np.nonzero((axes[i] >= blo[i] - pad) & (axes[i] <= bhi[i] + pad))[0]
        for i in range(3)
    ]
    occ = np.zeros(dims, dtype=bool)
    if all(len(s) for s in sel):
        gx, gy, gz = np.meshgrid(axes[0][sel[0]], axes[1][sel[1]], axes[2][sel[2]],
                                 indexing="ij")
        centers = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        dist = MeshDistance(mesh, spacing=voxel_size / 2.0).query(centers)
        near = (dist <= voxel_size * math.sqrt(3.0) / 2.0).reshape(gx.shape)
        ii, jj, kk = np.meshgrid(sel[0], sel[1], sel[2], indexing="ij")
        occ[ii, jj, kk] = near
    return VoxelSolid(ScalarGrid(lo, voxel_size, dims, occ.astype(np.float64)))


def erode(solid: VoxelSolid, radius_mm: float) -> VoxelSolid:
    """Remove occupied voxels within `radius_mm` of the empty region."""
    occ = solid.occupancy
    dist = distance_transform_edt(occ, sampling=solid.voxel_size)
    return solid.with_occupancy(occ & (dist > radius_mm))


def dilate(solid: VoxelSolid, radius_mm: float) -> VoxelSolid:
    """Add empty voxels within `radius_mm` of the occupied region."""
    occ = solid.occupancy
    if radius_mm <= 0 or occ.all() or not occ.any():
        return solid
    dist = distance_transform_edt(~occ, sampling=solid.voxel_size)
    return solid.with_occupancy(occ | (dist <= radius_mm))


def protrusion_report(vessel: VoxelSolid, fragments: Sequence[TriangleMesh]) -> List[Tuple[int, float]]:
    """Per-fragment maximum distance (mm) of its vertices outside the vessel solid."""
    occ = vessel.occupancy
    if occ.any():
        outside_dist = distance_transform_edt(~occ, sampling=vessel.voxel_size)
    else:
        outside_dist = np.full(occ.shape, np.inf)
    grid = ScalarGrid(vessel.grid.origin, vessel.grid.spacing, vessel.grid.dims,
                      outside_dist.astype(np.float64))
    # trilinear sampling clamps to the grid domain, so vertices beyond it
    # also pay their distance to the domain boundary
    lo = vessel.grid.origin
    hi = lo + vessel.voxel_size * (np.asarray(vessel.grid.dims) - 1)
    report = []
    for i, frag in enumerate(fragments):
        if not frag.vertex_count:
            report.append((i, 0.0))
            continue
        clamped = np.clip(frag.vertices, lo, hi)
        excess = np.linalg.norm(frag.vertices - clamped, axis=1)
        report.append((i, float((grid.sample(clamped) + excess).max())))
    return report


def write_protrusion_csv(report: Sequence[Tuple[int, float]], path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as handle:
        handle.write("fragment_id,max_protrusion_mm\n")
        for frag_id, mm in report:
            handle.write(f"{frag_id},{float(mm)!r}\n")


def make_support(vessel: TriangleMesh, fragments: Sequence[TriangleMesh],
                 spec: SupportSpec) -> TriangleMesh:
    """Shelled vessel copy with fragment-shaped recesses and optional label.

    The shell is the vessel solid minus its erosion by `shell_thickness`;
    each fragment (dilated by `clearance`) is subtracted, so every fragment
    surface point has at least the clearance of free space by construction.
    """
    blo, bhi = vessel.bounding_box()
    pad = spec.shell_thickness + spec.clearance + 2.0 * spec.voxel_size
    bounds = (np.asarray(blo) - pad, np.asarray(bhi) + pad)
    solid = voxelize(vessel, spec.voxel_size, bounds)
    if not solid.occupancy.any():
        raise SupportError("vessel voxelization is empty")
    report = protrusion_report(solid, fragments)
    bad = [(i, mm) for i, mm in report if mm > spec.clearance + spec.voxel_size]
    if bad:
        listing = ", ".join(f"fragment {i}: {mm:.2f} mm" for i, mm in bad)
        err = SupportError(f"fragments protrude outside the vessel: {listing}")
        err.report = report
        raise err
    shell = solid.with_occupancy(
        solid.occupancy & ~erode(solid, spec.shell_thickness).occupancy
    )
    for frag in fragments:
        if not frag.triangle_count:
            continue
        fd = diagnose(frag)
        if fd.is_watertight:
            frag_solid = voxelize(frag, spec.voxel_size, bounds)
        else:
            frag_solid = voxelize_surface(frag, spec.voxel_size, bounds)
        carved = dilate(frag_solid, spec.clearance)
        shell = shell.with_occupancy(shell.occupancy & ~carved.occupancy)
    if spec.label_text:
        if spec.label_region is None:
            raise SupportError("label_text set but label_region missing")
        shell = engrave_label(shell, spec.label_text, spec.label_region,
                              spec.label_depth)
    mesh = shell.to_mesh(smooth_iterations=2, smooth_lambda=0.2)
    if not mesh.triangle_count:
        raise SupportError("support shell is empty after subtraction")
    return mesh


# 5x7 dot-matrix glyphs, one string row per scanline, '#' = dot
_FONT_ROWS: Dict[str, Tuple[str, ...]] = {
    "A": (" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"),
    "B": ("#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "),
    "C": (" ####", "#    ", "#    ", "#    ", "#    ", "#    ", " ####"),
    "D": ("#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "),
    "E": ("#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"),
    "F": ("#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "),
    "G": (" ####", "#    ", "#    ", "#  ##", "#   #", "#   #", " ####"),
    "H": ("#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"),
    "I": ("#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "#####"),
    "J": ("    #", "    #", "    #", "    #", "#   #", "#   #", " ### "),
    "K": ("#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"),
    "L": ("#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"),
    "M": ("#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"),
    "N": ("#   #", "##  #", "# # #", "#  ##", "#   #", "#   #", "#   #"),
    "O": (" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "),
    "P": ("#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "),
    "Q": (" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"),
    "R": ("#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"),
    "S": (" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "),
    "T": ("#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "),
    "U": ("#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "),
    "V": ("#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "),
    "W": ("#   #", "#   #", "#   #", "# # #", "# # #", "## ##", "#   #"),
    "X": ("#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"),
    "Y": ("#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "),
    "Z": ("#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"),
    "0": (" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "),
    "1": ("  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", "#####"),
    "2": (" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"),
    "3": (" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "),
    "4": ("   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "),
    "5": ("#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "),
    "6": (" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "),
    "7": ("#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "),
    "8": (" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "),
    "9": (" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "),
    " ": ("     ",) * 7,
    ".": ("     ", "     ", "     ", "     ", "     ", "  ## ", "  ## "),
    "-": ("     ", "     ", "     ", "#####", "     ", "     ", "     "),
}


def glyph_dot_count(text: str) -> int:
    """Number of raster dots in the text (for engraving volume estimates)."""
    return sum(row.count("#") for ch in text for row in _FONT_ROWS[ch])


def _rasterize(text: str) -> np.ndarray:
    """Boolean raster (rows=7, cols=6*len-1), row 0 at the top."""
    cols = 6 * len(text) - 1
    raster = np.zeros((7, cols), dtype=bool)
    for pos, ch in enumerate(text):
        rows = _FONT_ROWS[ch]
        for r, row in enumerate(rows):
            for col, mark in enumerate(row):
                if mark == "#":
                    raster[r, pos * 6 + col] = True
    return raster


def engrave_label(solid: VoxelSolid, text: str,
                  region: Tuple[Sequence[float], Sequence[float]],
                  depth: float) -> VoxelSolid:
    """Subtract the text, rasterized in the built-in 5x7 font, from the solid.

    Glyphs are scaled to fit the region's two largest axes and extruded
    `depth` inward from the first occupied voxel along the smallest axis.
    """
    if not text:
        raise SupportError("label text is empty")
    bad = sorted(set(ch for ch in text if ch not in _FONT_ROWS))
    if bad:
        raise SupportError(f"unsupported label characters: {''.join(bad)!r} "
                           "(charset A-Z 0-9 space . -)")
    lo = np.asarray(region[0], dtype=np.float64)
    hi = np.asarray(region[1], dtype=np.float64)
    if not (hi > lo).all():
        raise SupportError(f"empty label region {region!r}")
    extents = hi - lo
    depth_axis = int(np.argmin(extents))
    plane_axes = [a for a in range(3) if a != depth_axis]
    raster = _rasterize(text)
    n_rows, n_cols = raster.shape
    # wider plane axis carries the text direction
    if extents[plane_axes[0]] >= extents[plane_axes[1]]:
        col_axis, row_axis = plane_axes[0], plane_axes[1]
    else:
        col_axis, row_axis = plane_axes[1], plane_axes[0]
    voxel = solid.voxel_size
    dot_mm = min(extents[col_axis] / n_cols, extents[row_axis] / n_rows)
    dot_voxels = int(dot_mm / voxel)
    if dot_voxels < 3:
        raise SupportError(
            f"label region too small: {dot_voxels} voxels per dot, need >= 3"
        )
    occ = solid.occupancy.copy()
    dims = solid.grid.dims
    origin = solid.grid.origin

    def axis_range(axis, a_lo, a_hi):
        i0 = max(int(math.ceil((a_lo - origin[axis]) / voxel)), 0)
        i1 = min(int(math.floor((a_hi - origin[axis]) / voxel)), dims[axis] - 1)
        return i0, i1

    c0, c1 = axis_range(col_axis, lo[col_axis], hi[col_axis])
    r0, r1 = axis_range(row_axis, lo[row_axis], hi[row_axis])
    d0, d1 = axis_range(depth_axis, lo[depth_axis], hi[depth_axis])
    if c1 < c0 or r1 < r0 or d1 < d0:
        raise SupportError("label region does not overlap the voxel grid")
    depth_voxels = max(int(round(depth / voxel)), 1)
    carved_any = False
    touched = False
    for ci in range(c0, c1 + 1):
        col = int((ci - c0) // dot_voxels)
        if col >= n_cols:
            break
        for ri in range(r0, r1 + 1):
            row = int((ri - r0) // dot_voxels)
            if row >= n_rows:
                break
            # raster row 0 is the top of the glyph = high coordinate
            if not raster[n_rows - 1 - row, col]:
                continue
            idx = [0, 0, 0]
            idx[col_axis] = ci
            idx[row_axis] = ri
            sl = [slice(None)] * 3
            sl[col_axis] = ci
            sl[row_axis] = ri
            line = occ[tuple(sl)][d0:d1 + 1]
            occupied = np.nonzero(line)[0]
            if not len(occupied):
                continue
            touched = True
            if len(occupied) == len(line):
                # fully solid through the region: engrave from the high end
                first = len(line) - depth_voxels
            elif occupied[0] > 0:
                first = occupied[0]
            else:
                first = occupied[-1] - depth_voxels + 1
            first = max(first, 0)
            line[first:first + depth_voxels] = False
            occ[tuple(sl)][d0:d1 + 1] = line
            carved_any = True
    if not touched:
        raise SupportError("label region does not intersect the solid surface")
    if not carved_any:
        raise SupportError("label text removed no material")
    return solid.with_occupancy(occ)


def _boundary_loops(triangles: np.ndarray) -> List[np.ndarray]:
    """Directed boundary edges (appearing once) chained into closed loops."""
    edges = np.concatenate([
        triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]],
    ])
    rev = np.sort(edges, axis=1)
    uniq, inverse, counts = np.unique(rev, axis=0, return_inverse=True,
                                      return_counts=True)
    boundary = edges[counts[inverse] == 1]
    succ = {int(u): int(v) for u, v in boundary}
    loops = []
    while succ:
        start, nxt = next(iter(succ.items()))
        loop = [start]
        while nxt != start:
            loop.append(nxt)
            nxt = succ.pop(nxt)
        succ.pop(start)
        loops.append(np.asarray(loop, dtype=np.int64))
    return loops


def _cap_loops(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Close every boundary loop with a fan to its centroid.

    Opposite-winding overlap between nested loops cancels exactly in the
    divergence-theorem volume, so the capped mesh measures the true solid.
    """
    verts = vertices
    tris = [triangles]
    for loop in _boundary_loops(triangles):
        center = verts[loop].mean(axis=0)
        ci = len(verts)
        verts = np.vstack([verts, center[None, :]])
        nxt = np.roll(loop, -1)
        # boundary edge (u, v) appears once; cap triangle (v, u, c) mirrors it
        fan = np.stack([nxt, loop, np.full(len(loop), ci, dtype=np.int64)], axis=1)
        tris.append(fan)
    return verts, np.vstack(tris)


def split_at_plane(mesh: TriangleMesh, axis: int, coord: float) -> Tuple[TriangleMesh, TriangleMesh]:
    """Cut a watertight mesh by an axis-aligned plane into two capped parts."""
    verts = mesh.vertices.copy()
    blo, bhi = mesh.bounding_box()
    eps = 1e-9 * max(float((np.asarray(bhi) - np.asarray(blo)).max()), 1.0)
    # snap near-plane vertices onto the plane to avoid sliver triangles
    near = np.abs(verts[:, axis] - coord) <= eps
    verts[near, axis] = coord
    side = np.sign(verts[:, axis] - coord)  # -1 below, 0 on plane, +1 above

    out_verts = [verts]
    cut_cache: Dict[Tuple[int, int], int] = {}
    n_base = len(verts)
    extra: List[np.ndarray] = []

    def cut_point(i, j):
        key = (i, j) if i < j else (j, i)
        if key in cut_cache:
            return cut_cache[key]
        pi, pj = verts[i], verts[j]
        t = (coord - pi[axis]) / (pj[axis] - pi[axis])
        p = pi + t * (pj - pi)
        p[axis] = coord
        idx = n_base + len(extra)
        extra.append(p)
        cut_cache[key] = idx
        return idx

    below: List[Tuple[int, int, int]] = []
    above: List[Tuple[int, int, int]] = []
    for tri in mesh.triangles:
        s = side[tri]
        if (s <= 0).all():
            below.append(tuple(tri))
            continue
        if (s >= 0).all():
            above.append(tuple(tri))
            continue
        # rotate so vertex 0 is alone on its side
        for _ in range(3):
            if (s[0] > 0 and s[1] <= 0 and s[2] <= 0) or (
                s[0] < 0 and s[1] >= 0 and s[2] >= 0
            ):
                break
            tri = np.roll(tri, -1)
            s = side[tri]
        i0, i1, i2 = (int(x) for x in tri)
        lone, o1, o2 = i0, i1, i2
        if side[o1] == 0 and side[o2] != 0:
            # plane passes through o1: one cut on edge (lone, o2)
            m = cut_point(lone, o2)
            t_lone = (lone, o1, m)
            t_rest = (o1, o2, m)
        elif side[o2] == 0 and side[o1] != 0:
            m = cut_point(lone, o1)
            t_lone = (lone, m, o2)
            t_rest = (m, o1, o2)
        else:
            m1 = cut_point(lone, o1)
            m2 = cut_point(lone, o2)
            t_lone = (lone, m1, m2)
            t_rest = None
            quad = ((m1, o1, o2), (m1, o2, m2))
        if side[lone] > 0:
            above.append(t_lone)
            if side[o1] == 0 or side[o2] == 0:
                below.append(t_rest)
            else:
                below.extend(quad)
        else:
            below.append(t_lone)
            if side[o1] == 0 or side[o2] == 0:
                above.append(t_rest)
            else:
                above.extend(quad)
    all_verts = np.vstack([verts] + [p[None, :] for p in extra]) if extra else verts

    def build(tri_list):
        if not tri_list:
            return None
        tris = np.asarray(tri_list, dtype=np.int64)
        capped_verts, capped_tris = _cap_loops(all_verts, tris)
        used = np.unique(capped_tris)
        remap = np.full(len(capped_verts), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriangleMesh(capped_verts[used], remap[capped_tris])

    return build(below), build(above)


def split_for_build(mesh: TriangleMesh, build_volume: Sequence[float],
                    seam_axis: str = "auto", margin: float = 2.0) -> List[TriangleMesh]:
    """Cut the mesh with axis-perpendicular planes so every part fits the printer.

    Uses the minimal number of equally spaced cuts along the seam axis;
    parts are returned in order along that axis, each capped watertight.
    """
    _require_solid(mesh)
    build = np.asarray(build_volume, dtype=np.float64)
    if build.shape != (3,) or (build <= 0).any():
        raise SupportError(f"build volume must be 3 positive extents, got {build_volume!r}")
    blo, bhi = (np.asarray(b) for b in mesh.bounding_box())
    extent = bhi - blo
    allowed = build - 2.0 * margin
    if (allowed <= 0).any():
        raise SupportError(f"build volume {build_volume!r} smaller than twice the margin")
    if seam_axis == "auto":
        over = extent / allowed
        axis = int(np.argmax(over))
    else:
        if seam_axis not in _AXES:
            raise SupportError(f"seam_axis must be x, y, z or auto, got {seam_axis!r}")
        axis = _AXES[seam_axis]
    others = [a for a in range(3) if a != axis]
    violating = [("x", "y", "z")[a] for a in others if extent[a] > allowed[a]]
    if violating:
        dims = ", ".join(
            f"{name}={extent[_AXES[name]]:.1f} mm > {allowed[_AXES[name]]:.1f} mm"
            for name in violating
        )
        raise SupportError(f"mesh cross-section exceeds the build volume: {dims}")
    n_parts = max(int(math.ceil(extent[axis] / allowed[axis])), 1)
    if n_parts == 1:
        return [mesh]
    cuts = [blo[axis] + extent[axis] * i / n_parts for i in range(1, n_parts)]
    parts: List[TriangleMesh] = []
    rest = mesh
    for coord in cuts:
        low, high = split_at_plane(rest, axis, float(coord))
        if low is not None:
            parts.append(low)
        if high is None:
            rest = None
            break
        rest = high
    if rest is not None:
        parts.append(rest)
    return parts
