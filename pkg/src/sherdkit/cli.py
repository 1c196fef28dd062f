"""Command-line front end for the vessel reconstruction toolkit."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import meshio
from .calibrate import apply_scale, compute_factor
from .errors import ProjectError, SherdkitError
from .implicit import ReconstructionSettings, reconstruct_vessel
from .mesh import enclosed_volume
from .profile import (
    Circle3D,
    build_skeleton,
    fit_circle,
    hull_excess_percent,
    revolve,
    revolve_volume,
    skeleton_from_csv,
    skeleton_hull_volume,
    skeleton_to_csv,
)
from .project import load_project, record_from_dict, run_pipeline, write_report
from .register import RigidTransform, ZAlignment, align_z, icp_rigid, merge_shells
from .support import SupportSpec, VoxelSolid, engrave_label, make_support, split_for_build, voxelize
from .synth import FracturePlan, VesselProfile, fracture, generate_vessel, write_scenario_manifest


def _vec3(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z — got {text!r}")
    return tuple(float(p) for p in parts)


def _emit(doc, verbose_note=None, verbose=False):
    if verbose and verbose_note:
        print(verbose_note, file=sys.stderr)
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="ascii", newline="\n")


def _cmd_scale(args):
    mesh = meshio.load_mesh(args.input)
    calibration = compute_factor(args.point_a, args.point_b, args.real_distance)
    scaled = apply_scale(mesh, calibration, recenter=args.recenter)
    meshio.save_mesh(scaled, args.out)
    _emit({"factor": calibration.factor, "out": str(args.out)},
          f"scaled by {calibration.factor!r}", args.verbose)


def _cmd_fit_rim(args):
    mesh = meshio.load_mesh(args.input) if args.input else None
    circles = []
    for sel in args.vertices or []:
        indices = np.asarray([int(i) for i in sel.split(",")], dtype=np.int64)
        if mesh is None:
            raise ProjectError("--vertices needs an input mesh")
        circle, rms = fit_circle(mesh.vertices[indices])
        circles.append({"circle": circle.to_dict(), "rms_mm": rms})
    for path in args.points_file or []:
        pts = np.loadtxt(path, delimiter=",", ndmin=2)
        circle, rms = fit_circle(pts)
        circles.append({"circle": circle.to_dict(), "rms_mm": rms})
    if not circles:
        raise ProjectError("fit-rim needs --vertices or --points-file")
    if args.out:
        _write_json(args.out, circles)
    _emit(circles, f"fitted {len(circles)} circles", args.verbose)


def _load_circles(paths):
    circles = []
    for path in paths:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        for entry in doc:
            c = entry["circle"]
            circles.append(Circle3D(center=np.asarray(c["center"]),
                                    radius=float(c["radius_mm"]),
                                    normal=np.asarray(c["normal"])))
    return circles


def _cmd_skeleton(args):
    circles = _load_circles(args.circles)
    skeleton = build_skeleton(circles, bottom_closed=not args.open_bottom)
    skeleton_to_csv(skeleton, args.out)
    _emit({"rings": len(skeleton.rings), "out": str(args.out)},
          f"skeleton with {len(skeleton.rings)} rings", args.verbose)


def _cmd_revolve(args):
    skeleton = skeleton_from_csv(args.skeleton)
    mesh = revolve(skeleton, args.segments)
    meshio.save_mesh(mesh, args.out)
    _emit({"volume_cm3": enclosed_volume(mesh), "out": str(args.out)},
          None, args.verbose)


def _cmd_hull_volume(args):
    skeleton = skeleton_from_csv(args.skeleton)
    _, hull_vol = skeleton_hull_volume(skeleton, args.segments)
    rev_vol = revolve_volume(skeleton, args.segments)
    _emit({
        "hull_volume_cm3": hull_vol,
        "revolve_volume_cm3": rev_vol,
        "hull_gap_percent": hull_excess_percent(hull_vol, rev_vol),
    }, None, args.verbose)


def _cmd_align_z(args):
    moving = meshio.load_mesh(args.moving)
    fixed = meshio.load_mesh(args.fixed)
    alignment = align_z(moving, fixed, theta_steps=args.theta_steps,
                        dz_range=(args.dz_min, args.dz_max), dz_steps=args.dz_steps)
    if args.out:
        _write_json(args.out, alignment.to_dict())
    _emit(alignment.to_dict(), None, args.verbose)


def _cmd_icp(args):
    moving = meshio.load_mesh(args.moving)
    fixed = meshio.load_mesh(args.fixed)
    seed = None
    if args.seed_pose:
        seed = RigidTransform.from_dict(
            json.loads(Path(args.seed_pose).read_text(encoding="utf-8"))
        )
    result = icp_rigid(moving, fixed, seed=seed,
                       max_iterations=args.max_iterations,
                       convergence_mm=args.convergence_mm)
    doc = {
        "transform": result.transform.to_dict(),
        "rms_mm": result.rms,
        "iterations": result.iterations,
        "converged": result.converged,
    }
    if args.out:
        _write_json(args.out, doc)
    _emit(doc, None, args.verbose)


def _cmd_merge(args):
    inner = meshio.load_mesh(args.inner)
    outer = meshio.load_mesh(args.outer)
    doc = json.loads(Path(args.alignment).read_text(encoding="utf-8"))
    alignment = ZAlignment(theta=doc["theta_rad"], dz=doc["dz_mm"],
                           mean_residual=doc["mean_residual_mm"],
                           theta_degenerate=doc.get("theta_degenerate", False))
    merged = merge_shells(inner, outer, alignment)
    meshio.save_mesh(merged, args.out)
    _emit({"vertices": merged.vertex_count, "triangles": merged.triangle_count,
           "out": str(args.out)}, None, args.verbose)


def _cmd_poisson(args):
    fragments = [meshio.load_mesh(p) for p in args.inputs]
    settings = ReconstructionSettings(neighbors=args.neighbors,
                                      grid_dims=args.grid, padding=args.padding)
    mesh, volume = reconstruct_vessel(fragments, settings)
    meshio.save_mesh(mesh, args.out)
    _emit({"volume_cm3": volume, "vertices": mesh.vertex_count,
           "triangles": mesh.triangle_count, "out": str(args.out)},
          None, args.verbose)


def _cmd_volume(args):
    mesh = meshio.load_mesh(args.input)
    _emit({"volume_cm3": enclosed_volume(mesh)}, None, args.verbose)


def _cmd_support(args):
    vessel = meshio.load_mesh(args.vessel)
    fragments = [meshio.load_mesh(p) for p in args.fragments or []]
    spec = SupportSpec(
        shell_thickness=args.shell_thickness,
        clearance=args.clearance,
        voxel_size=args.voxel_size,
        build_volume=args.build_volume,
        label_text=args.label_text or "",
        label_depth=args.label_depth,
        label_region=(
            (args.label_region_lo, args.label_region_hi)
            if args.label_region_lo and args.label_region_hi else None
        ),
    )
    mesh = make_support(vessel, fragments, spec)
    meshio.save_mesh(mesh, args.out)
    _emit({"vertices": mesh.vertex_count, "triangles": mesh.triangle_count,
           "out": str(args.out)}, None, args.verbose)


def _cmd_split(args):
    mesh = meshio.load_mesh(args.input)
    parts = split_for_build(mesh, args.build_volume, seam_axis=args.seam_axis)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, part in enumerate(parts):
        path = out_dir / f"part_{i}.stl"
        meshio.save_mesh(part, path)
        names.append(str(path))
    _emit({"parts": names}, f"{len(parts)} parts", args.verbose)


def _cmd_engrave(args):
    mesh = meshio.load_mesh(args.input)
    solid = voxelize(mesh, args.voxel_size)
    engraved = engrave_label(solid, args.text,
                             (args.region_lo, args.region_hi), args.depth)
    out_mesh = engraved.to_mesh(smooth_iterations=0)
    meshio.save_mesh(out_mesh, args.out)
    _emit({"removed_voxels": solid.count() - engraved.count(),
           "out": str(args.out)}, None, args.verbose)


def _cmd_synth(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    control = tuple(
        tuple(float(x) for x in row.split(",")) for row in args.control
    ) if args.control else ((0.0, 30.0, 4.0), (40.0, 38.0, 4.0), (80.0, 24.0, 4.0))
    profile = VesselProfile(control=control, segments=args.segments)
    vessel, capacity, wall = generate_vessel(profile)
    meshio.save_mesh(vessel, out_dir / "vessel.stl")
    plan = FracturePlan(seed_count=args.sherds, rng_seed=args.seed,
                        noise_sigma=args.noise, dropout=args.dropout,
                        scatter=args.scatter)
    sherds = fracture(vessel, plan)
    for i, (sherd, _pose) in enumerate(sherds):
        meshio.save_mesh(sherd, out_dir / f"sherd_{i}.stl")
    write_scenario_manifest(out_dir / "manifest.json", profile, plan, sherds,
                            capacity, wall)
    _emit({"vessel": str(out_dir / "vessel.stl"), "sherds": len(sherds),
           "capacity_cm3": capacity, "wall_cm3": wall},
          None, args.verbose)


def _cmd_run(args):
    project = load_project(args.project)
    records = run_pipeline(project)
    _emit({"records": len(records), "output_dir": str(project.output_dir)},
          None, args.verbose)


def _cmd_report(args):
    doc = json.loads(Path(args.records).read_text(encoding="utf-8"))
    records = [record_from_dict(entry) for entry in doc]
    write_report(records, args.out)
    _emit({"rows": len(records), "out": str(args.out)}, None, args.verbose)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sherdkit",
        description="Reconstruct ceramic vessels from digitized fragment meshes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--verbose", action="store_true")
        return p

    p = add("scale", _cmd_scale, help="calibrate model units to millimetres")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--point-a", type=_vec3, required=True)
    p.add_argument("--point-b", type=_vec3, required=True)
    p.add_argument("--real-distance", type=float, required=True,
                   help="known real distance between the points, mm")
    p.add_argument("--recenter", action="store_true")

    p = add("fit-rim", _cmd_fit_rim, help="fit circles to rim point selections")
    p.add_argument("input", nargs="?")
    p.add_argument("--vertices", action="append",
                   help="comma-separated vertex indices (repeatable)")
    p.add_argument("--points-file", action="append",
                   help="CSV file of x,y,z rim points (repeatable)")
    p.add_argument("--out")

    p = add("skeleton", _cmd_skeleton, help="build the coaxial profile skeleton")
    p.add_argument("--circles", nargs="+", required=True,
                   help="circle JSON files from fit-rim")
    p.add_argument("--out", required=True)
    p.add_argument("--open-bottom", action="store_true")

    p = add("revolve", _cmd_revolve, help="revolve a skeleton into a closed mesh")
    p.add_argument("--skeleton", required=True)
    p.add_argument("--segments", type=int, default=128)
    p.add_argument("--out", required=True)

    p = add("hull-volume", _cmd_hull_volume,
            help="convex-hull and revolve volumes of a skeleton")
    p.add_argument("--skeleton", required=True)
    p.add_argument("--segments", type=int, default=128)

    p = add("align-z", _cmd_align_z, help="rotation+slide alignment about Z")
    p.add_argument("moving")
    p.add_argument("fixed")
    p.add_argument("--theta-steps", type=int, default=360)
    p.add_argument("--dz-min", type=float, default=-10.0)
    p.add_argument("--dz-max", type=float, default=10.0)
    p.add_argument("--dz-steps", type=int, default=100)
    p.add_argument("--out")

    p = add("icp", _cmd_icp, help="rigid ICP refinement from a seed pose")
    p.add_argument("moving")
    p.add_argument("fixed")
    p.add_argument("--seed-pose", help="JSON file with rotation/translation")
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("--convergence-mm", type=float, default=1e-6)
    p.add_argument("--out")

    p = add("merge", _cmd_merge, help="apply a Z alignment and merge two shells")
    p.add_argument("inner")
    p.add_argument("outer")
    p.add_argument("--alignment", required=True)
    p.add_argument("--out", required=True)

    p = add("poisson", _cmd_poisson, help="implicit reconstruction from fragments")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--neighbors", type=int, default=16)
    p.add_argument("--padding", type=float, default=0.1)
    p.add_argument("--out", required=True)

    p = add("volume", _cmd_volume, help="enclosed volume of a watertight mesh")
    p.add_argument("input")

    p = add("support", _cmd_support, help="generate the display support")
    p.add_argument("vessel")
    p.add_argument("--fragments", nargs="*")
    p.add_argument("--shell-thickness", type=float, default=4.0)
    p.add_argument("--clearance", type=float, default=0.4)
    p.add_argument("--voxel-size", type=float, default=0.8)
    p.add_argument("--build-volume", type=_vec3, default=(200.0, 200.0, 200.0))
    p.add_argument("--label-text")
    p.add_argument("--label-depth", type=float, default=1.0)
    p.add_argument("--label-region-lo", type=_vec3)
    p.add_argument("--label-region-hi", type=_vec3)
    p.add_argument("--out", required=True)

    p = add("split", _cmd_split, help="split a mesh to fit the build volume")
    p.add_argument("input")
    p.add_argument("--build-volume", type=_vec3, default=(200.0, 200.0, 200.0))
    p.add_argument("--seam-axis", choices=("x", "y", "z", "auto"), default="auto")
    p.add_argument("--out", required=True, help="output directory for parts")

    p = add("engrave", _cmd_engrave, help="engrave text into a solid mesh")
    p.add_argument("input")
    p.add_argument("--text", required=True)
    p.add_argument("--region-lo", type=_vec3, required=True)
    p.add_argument("--region-hi", type=_vec3, required=True)
    p.add_argument("--depth", type=float, default=1.0)
    p.add_argument("--voxel-size", type=float, default=0.8)
    p.add_argument("--out", required=True)

    p = add("synth", _cmd_synth, help="generate a synthetic vessel + sherd scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--control", nargs="+",
                   help="profile rows height,outer_radius,wall (mm)")
    p.add_argument("--segments", type=int, default=96)
    p.add_argument("--sherds", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0,
                   help="fraction of each sherd's triangles lost to abrasion")
    p.add_argument("--scatter", action="store_true")

    p = add("run", _cmd_run, help="run a project file end to end")
    p.add_argument("project")

    p = add("report", _cmd_report, help="render a metrics report from records JSON")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True, help="output directory")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ProjectError as exc:
        json.dump(exc.record(), sys.stderr, sort_keys=True)
        sys.stderr.write("\n")
        return 1
    except SherdkitError as exc:
        json.dump({"error": str(exc), "type": type(exc).__name__},
                  sys.stderr, sort_keys=True)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
