"""Project files and pipeline orchestration.

A project is a single JSON document declaring input units, up axis,
fragment meshes (with optional calibration and seed poses) and an ordered
task list. Running it executes the tasks sequentially, writes all
artifacts under the output directory, and renders the per-vessel metrics
report in CSV and aligned-text form.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import meshio
from .calibrate import ScaleCalibration, apply_scale, compute_factor
from .errors import ProjectError, SherdkitError
from .implicit import ReconstructionSettings, reconstruct_vessel
from .mesh import MetricsRecord, TriangleMesh, enclosed_volume
from .profile import (
    Circle3D,
    build_skeleton,
    fit_circle,
    hull_excess_percent,
    revolve,
    skeleton_hull_volume,
    skeleton_to_csv,
    revolve_volume,
)
from .register import RigidTransform, align_z, icp_rigid, merge_shells
from .support import SupportSpec, make_support, split_for_build

SCHEMA_VERSION = 1
_UNIT_TO_MM = {"mm": 1.0, "cm": 10.0, "m": 1000.0}
# rotation taking the declared up axis onto +Z
_UP_ROTATIONS = {
    "z": np.eye(3),
    "x": np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
    "y": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
}

PAPER_COLUMNS = (
    "Ceramic name",
    "Number of photos",
    "Number of points (point cloud)",
    "Number of surfaces",
    "Number of vertices",
    "Calculation time",
    "Volume (cm ³)",
)
GAP_COLUMN = "Hull vs revolve gap (%)"
REPORT_COLUMNS = PAPER_COLUMNS + (GAP_COLUMN,)
LOCALE_NOTE = (
    "# Decimal separator: point. Source values using decimal commas are "
    "normalized (e.g. 536,4 -> 536.4)."
)


def crop_fragment(mesh: TriangleMesh, box, keep: str = "inside") -> TriangleMesh:
    """Keep the triangles whose centroid falls on one side of an axis-aligned box."""
    lo = np.asarray(box[0], dtype=np.float64)
    hi = np.asarray(box[1], dtype=np.float64)
    if lo.shape != (3,) or hi.shape != (3,) or not (hi > lo).all():
        raise ProjectError(f"invalid crop box {box!r}")
    if keep not in ("inside", "outside"):
        raise ProjectError(f"keep must be 'inside' or 'outside', got {keep!r}")
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    inside = ((centroids >= lo) & (centroids <= hi)).all(axis=1)
    sel = inside if keep == "inside" else ~inside
    if not sel.any():
        raise ProjectError(f"crop (keep={keep}) removed every triangle")
    tris = mesh.triangles[sel]
    used = np.unique(tris)
    remap = np.full(mesh.vertex_count, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[tris])


def _format_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def record_row(record: MetricsRecord) -> List[str]:
    return [
        _format_cell(record.name),
        _format_cell(record.photo_count),
        _format_cell(record.point_count),
        _format_cell(record.surface_count),
        _format_cell(record.vertex_count),
        _format_cell(record.calculation_time),
        _format_cell(float(record.volume_cm3)),
        "-" if record.hull_excess_percent is None
        else f"{record.hull_excess_percent:.2f}",
    ]


def render_report_csv(records: Sequence[MetricsRecord]) -> str:
    lines = [LOCALE_NOTE]
    lines.append(",".join(f'"{c}"' for c in REPORT_COLUMNS))
    for record in records:
        lines.append(",".join(f'"{cell}"' for cell in record_row(record)))
    return "\n".join(lines) + "\n"


def render_report_text(records: Sequence[MetricsRecord]) -> str:
    rows = [list(REPORT_COLUMNS)] + [record_row(r) for r in records]
    widths = [max(len(row[i]) for row in rows) for i in range(len(REPORT_COLUMNS))]
    lines = [LOCALE_NOTE]
    for n, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report(records: Sequence[MetricsRecord], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(render_report_csv(records),
                                    encoding="utf-8", newline="\n")
    (out / "report.txt").write_text(render_report_text(records),
                                    encoding="utf-8", newline="\n")


def record_from_dict(data: dict) -> MetricsRecord:
    def _num(value):
        # European-style decimal commas are normalized to points
        if isinstance(value, str):
            value = value.replace(",", ".")
        return float(value)

    return MetricsRecord(
        name=str(data["name"]),
        surface_count=int(data["surfaces"]),
        vertex_count=int(data["vertices"]),
        volume_cm3=_num(data["volume_cm3"]),
        photo_count=int(data["photos"]) if data.get("photos") is not None else None,
        point_count=int(data["points"]) if data.get("points") is not None else None,
        calculation_time=data.get("calculation_time"),
        hull_excess_percent=(
            _num(data["hull_gap_percent"])
            if data.get("hull_gap_percent") is not None else None
        ),
    )


@dataclass
class FragmentEntry:
    """One fragment declaration from the project file."""

    fragment_id: str
    path: Path
    calibration: Optional[dict] = None
    seed_pose: Optional[RigidTransform] = None
    rim_selections: Optional[List[List[int]]] = None
    metadata: dict = field(default_factory=dict)


@dataclass
class Project:
    """Validated project document."""

    units: str
    up_axis: str
    output_dir: Path
    fragments: List[FragmentEntry]
    pipeline: List[dict]
    base_dir: Path
    name: str = "vessel"

    @staticmethod
    def from_dict(doc: dict, base_dir) -> "Project":
        base = Path(base_dir)
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ProjectError(
                f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
            )
        units = doc.get("units")
        if units not in _UNIT_TO_MM:
            raise ProjectError(f"units must be one of mm, cm, m; got {units!r}")
        up_axis = doc.get("up_axis", "z")
        if up_axis not in _UP_ROTATIONS:
            raise ProjectError(f"up_axis must be x, y or z; got {up_axis!r}")
        pipeline = doc.get("pipeline")
        if not isinstance(pipeline, list) or not pipeline:
            raise ProjectError("pipeline task list is missing or empty")
        for task in pipeline:
            if not isinstance(task, dict) or "task" not in task:
                raise ProjectError(f"malformed pipeline entry {task!r}")
        fragments = []
        seen = set()
        for entry in doc.get("fragments", []):
            frag_id = entry.get("id")
            if not frag_id or frag_id in seen:
                raise ProjectError(f"fragment ids must be unique and non-empty, got {frag_id!r}")
            seen.add(frag_id)
            path = base / entry["path"]
            if not path.exists():
                raise ProjectError(f"fragment {frag_id}: mesh not found: {path}",
                                   fragment=frag_id)
            seed_pose = None
            if entry.get("seed_pose") is not None:
                seed_pose = RigidTransform.from_dict(entry["seed_pose"])
            fragments.append(FragmentEntry(
                fragment_id=frag_id,
                path=path,
                calibration=entry.get("calibration"),
                seed_pose=seed_pose,
                rim_selections=entry.get("rim_selections"),
                metadata=entry.get("metadata", {}),
            ))
        out_dir = base / doc.get("output_dir", "out")
        return Project(
            units=units,
            up_axis=up_axis,
            output_dir=out_dir,
            fragments=fragments,
            pipeline=pipeline,
            base_dir=base,
            name=doc.get("name", "vessel"),
        )


def load_project(path) -> Project:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ProjectError(f"cannot read project file {path}: {exc}") from exc
    return Project.from_dict(doc, path.parent)


class _PipelineState:
    def __init__(self, project: Project):
        self.project = project
        self.meshes: Dict[str, TriangleMesh] = {}
        self.circles: List[Circle3D] = []
        self.skeleton = None
        self.poses: Dict[str, RigidTransform] = {}
        self.alignment = None
        self.volumes: Dict[str, float] = {}
        self.hull_gap: Optional[float] = None
        self.records: List[MetricsRecord] = []


def _load_fragments(project: Project, state: _PipelineState) -> None:
    factor = _UNIT_TO_MM[project.units]
    rotation = _UP_ROTATIONS[project.up_axis]
    for entry in project.fragments:
        mesh = meshio.load_mesh(entry.path)
        verts = mesh.vertices * factor
        if project.up_axis != "z":
            verts = verts @ rotation.T
        state.meshes[entry.fragment_id] = mesh.with_vertices(verts)


def _entry(project: Project, frag_id: str) -> FragmentEntry:
    for entry in project.fragments:
        if entry.fragment_id == frag_id:
            return entry
    raise ProjectError(f"unknown fragment id {frag_id!r}", fragment=frag_id)


def _get_mesh(state: _PipelineState, frag_id: str, task: str) -> TriangleMesh:
    if frag_id not in state.meshes:
        raise ProjectError(f"no mesh named {frag_id!r}", task=task, fragment=frag_id)
    return state.meshes[frag_id]


def _task_scale(project, state, params):
    targets = params.get("fragments") or [
        e.fragment_id for e in project.fragments if e.calibration
    ]
    for frag_id in targets:
        entry = _entry(project, frag_id)
        if not entry.calibration:
            raise ProjectError("fragment has no calibration", task="scale",
                               fragment=frag_id)
        cal = entry.calibration
        calibration = compute_factor(cal["point_a"], cal["point_b"],
                                     cal["real_distance_mm"])
        state.meshes[frag_id] = apply_scale(state.meshes[frag_id], calibration,
                                            recenter=bool(params.get("recenter")))


def _task_crop(project, state, params):
    frag_id = params["fragment"]
    mesh = _get_mesh(state, frag_id, "crop")
    state.meshes[frag_id] = crop_fragment(mesh, (params["box"][0], params["box"][1]),
                                          params.get("keep", "inside"))


def _task_fit_rim(project, state, params):
    frag_id = params["fragment"]
    mesh = _get_mesh(state, frag_id, "fit-rim")
    selections = params.get("selections")
    if selections is None:
        selections = _entry(project, frag_id).rim_selections
    if not selections:
        raise ProjectError("no rim selections given", task="fit-rim", fragment=frag_id)
    fits = []
    for indices in selections:
        pts = mesh.vertices[np.asarray(indices, dtype=np.int64)]
        circle, rms = fit_circle(pts)
        fits.append((circle, rms))
        state.circles.append(circle)
    out = state.project.output_dir / f"{frag_id}_rim_circles.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = [
        {"circle": circle.to_dict(), "rms_mm": rms}
        for circle, rms in fits
    ]
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                   encoding="ascii", newline="\n")


def _task_skeleton(project, state, params):
    if len(state.circles) < 2:
        raise ProjectError("skeleton needs at least 2 fitted circles", task="skeleton")
    state.skeleton = build_skeleton(state.circles,
                                    bottom_closed=params.get("bottom_closed", True))
    out = state.project.output_dir / "skeleton.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    skeleton_to_csv(state.skeleton, out)


def _task_revolve(project, state, params):
    if state.skeleton is None:
        raise ProjectError("revolve needs a skeleton", task="revolve")
    segments = int(params.get("segments", 128))
    mesh = revolve(state.skeleton, segments)
    name = params.get("out", "revolve.stl")
    out = state.project.output_dir / name
    out.parent.mkdir(parents=True, exist_ok=True)
    meshio.save_mesh(mesh, out)
    state.meshes[params.get("id", "revolve")] = mesh
    state.volumes["revolve"] = revolve_volume(state.skeleton, segments)


def _task_hull_volume(project, state, params):
    if state.skeleton is None:
        raise ProjectError("hull-volume needs a skeleton", task="hull-volume")
    segments = int(params.get("segments", 128))
    _hull, hull_vol = skeleton_hull_volume(state.skeleton, segments)
    state.volumes["hull"] = hull_vol
    if "revolve" not in state.volumes:
        state.volumes["revolve"] = revolve_volume(state.skeleton, segments)
    state.hull_gap = hull_excess_percent(hull_vol, state.volumes["revolve"])


def _task_align_z(project, state, params):
    moving = _get_mesh(state, params["moving"], "align-z")
    fixed = _get_mesh(state, params["fixed"], "align-z")
    state.alignment = align_z(
        moving, fixed,
        theta_steps=int(params.get("theta_steps", 360)),
        dz_range=tuple(params.get("dz_range", (-10.0, 10.0))),
        dz_steps=int(params.get("dz_steps", 100)),
    )
    out = state.project.output_dir / "alignment.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(state.alignment.to_dict(), indent=2, sort_keys=True) + "\n",
                   encoding="ascii", newline="\n")


def _task_icp(project, state, params):
    fixed = _get_mesh(state, params["fixed"], "icp")
    targets = params.get("fragments")
    if targets is None:
        targets = [e.fragment_id for e in project.fragments
                   if e.seed_pose is not None]
    for frag_id in targets:
        moving = _get_mesh(state, frag_id, "icp")
        seed = _entry(project, frag_id).seed_pose
        result = icp_rigid(
            moving, fixed, seed=seed,
            max_iterations=int(params.get("max_iterations", 50)),
            convergence_mm=float(params.get("convergence_mm", 1e-6)),
        )
        state.poses[frag_id] = result.transform
        state.meshes[frag_id] = result.transform.apply_mesh(moving)


def _task_merge(project, state, params):
    inner = _get_mesh(state, params["inner"], "merge")
    outer = _get_mesh(state, params["outer"], "merge")
    if state.alignment is None:
        raise ProjectError("merge needs a prior align-z task", task="merge")
    merged = merge_shells(inner, outer, state.alignment)
    out_id = params.get("id", "merged")
    state.meshes[out_id] = merged
    out = state.project.output_dir / params.get("out", "merged.stl")
    out.parent.mkdir(parents=True, exist_ok=True)
    meshio.save_mesh(merged, out)


def _task_poisson(project, state, params):
    frag_ids = params.get("fragments") or [e.fragment_id for e in project.fragments]
    fragments = [_get_mesh(state, f, "poisson") for f in frag_ids]
    settings = ReconstructionSettings(
        neighbors=int(params.get("neighbors", 16)),
        grid_dims=int(params.get("grid", 128)),
        padding=float(params.get("padding", 0.1)),
    )
    mesh, volume = reconstruct_vessel(fragments, settings)
    out_id = params.get("id", "reconstruction")
    state.meshes[out_id] = mesh
    state.volumes[out_id] = volume
    out = state.project.output_dir / params.get("out", "reconstruction.stl")
    out.parent.mkdir(parents=True, exist_ok=True)
    meshio.save_mesh(mesh, out)


def _task_volume(project, state, params):
    frag_id = params.get("fragment", "reconstruction")
    mesh = _get_mesh(state, frag_id, "volume")
    volume = enclosed_volume(mesh)
    state.volumes[frag_id] = volume
    entry = next((e for e in project.fragments if e.fragment_id == frag_id), None)
    meta = entry.metadata if entry else {}
    state.records.append(MetricsRecord(
        name=params.get("name", project.name),
        surface_count=mesh.triangle_count,
        vertex_count=mesh.vertex_count,
        volume_cm3=volume,
        photo_count=meta.get("photos"),
        point_count=meta.get("points"),
        calculation_time=meta.get("calculation_time"),
        hull_excess_percent=state.hull_gap,
    ))


def _support_spec(params) -> SupportSpec:
    region = params.get("label_region")
    return SupportSpec(
        shell_thickness=float(params.get("shell_thickness", 4.0)),
        clearance=float(params.get("clearance", 0.4)),
        voxel_size=float(params.get("voxel_size", 0.8)),
        build_volume=tuple(params.get("build_volume", (200.0, 200.0, 200.0))),
        label_text=params.get("label_text", ""),
        label_depth=float(params.get("label_depth", 1.0)),
        label_region=(tuple(region[0]), tuple(region[1])) if region else None,
    )


def _task_support(project, state, params):
    vessel = _get_mesh(state, params.get("vessel", "reconstruction"), "support")
    frag_ids = params.get("fragments", [])
    fragments = [_get_mesh(state, f, "support") for f in frag_ids]
    spec = _support_spec(params)
    mesh = make_support(vessel, fragments, spec)
    state.meshes[params.get("id", "support")] = mesh
    out = state.project.output_dir / params.get("out", "support.stl")
    out.parent.mkdir(parents=True, exist_ok=True)
    meshio.save_mesh(mesh, out)


def _task_split(project, state, params):
    mesh = _get_mesh(state, params.get("fragment", "support"), "split")
    parts = split_for_build(
        mesh,
        tuple(params.get("build_volume", (200.0, 200.0, 200.0))),
        seam_axis=params.get("seam_axis", "auto"),
    )
    out_dir = state.project.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = params.get("out", "part")
    for i, part in enumerate(parts):
        meshio.save_mesh(part, out_dir / f"{stem}_{i}.stl")
        state.meshes[f"{stem}_{i}"] = part


def _task_report(project, state, params):
    records = list(state.records)
    for extra in params.get("fixtures", []):
        records.append(record_from_dict(extra))
    if not records:
        raise ProjectError("report task has no metrics records", task="report")
    write_report(records, state.project.output_dir)


_TASKS = {
    "scale": _task_scale,
    "crop": _task_crop,
    "fit-rim": _task_fit_rim,
    "skeleton": _task_skeleton,
    "revolve": _task_revolve,
    "hull-volume": _task_hull_volume,
    "align-z": _task_align_z,
    "icp": _task_icp,
    "merge": _task_merge,
    "poisson": _task_poisson,
    "volume": _task_volume,
    "support": _task_support,
    "split": _task_split,
    "report": _task_report,
}


def run_pipeline(project: Project) -> List[MetricsRecord]:
    """Execute the project's tasks in order; returns the metrics records.

    Any task failure is re-raised as a ProjectError naming the task (and
    fragment where known); artifacts written before the failure remain.
    """
    state = _PipelineState(project)
    project.output_dir.mkdir(parents=True, exist_ok=True)
    _load_fragments(project, state)
    for step in project.pipeline:
        name = step["task"]
        handler = _TASKS.get(name)
        if handler is None:
            raise ProjectError(f"unknown task {name!r}", task=name)
        params = {k: v for k, v in step.items() if k != "task"}
        try:
            handler(project, state, params)
        except ProjectError as exc:
            if exc.task is None:
                exc.task = name
            raise
        except SherdkitError as exc:
            raise ProjectError(str(exc), task=name,
                               fragment=params.get("fragment")) from exc
        except KeyError as exc:
            raise ProjectError(f"missing required parameter {exc}", task=name) from exc
    return state.records
