"""Geometry toolkit for reconstructing ceramic vessels from fragment meshes.

Pipeline stages: mesh IO and diagnostics, scale calibration, rim-circle
fitting and profile revolution, rigid registration, implicit (Poisson-style)
reconstruction, printable display-support generation, and a CLI that
orchestrates project files end to end.
"""

from .calibrate import ScaleCalibration, apply_scale, compute_factor
from .distance import MeshDistance, hausdorff_distance, point_triangle_distance, surface_samples
from .errors import (
    DegenerateInputError,
    InvalidMeshError,
    MeshFormatError,
    NotWatertightError,
    OrientationError,
    ProjectError,
    ReconstructionError,
    RegistrationError,
    SherdkitError,
    SupportError,
)
from .implicit import (
    OrientedPointCloud,
    PoissonResult,
    ReconstructionSettings,
    ScalarGrid,
    estimate_normals,
    extract_isosurface,
    poisson_reconstruct,
    reconstruct_vessel,
)
from .mesh import (
    MeshDiagnostics,
    MetricsRecord,
    TriangleMesh,
    convex_hull,
    diagnose,
    enclosed_volume,
    laplacian_smooth,
    orient_consistently,
    split_components,
    weld_vertices,
)
from .meshio import load_mesh, save_mesh
from .profile import (
    Circle3D,
    CircleFit,
    ProfileSkeleton,
    build_skeleton,
    estimate_axis,
    fit_circle,
    hull_excess_percent,
    revolve,
    revolve_volume,
    skeleton_analytic_volume,
    skeleton_from_csv,
    skeleton_hull_volume,
    skeleton_to_csv,
)
from .project import (
    Project,
    crop_fragment,
    load_project,
    render_report_csv,
    render_report_text,
    run_pipeline,
    write_report,
)
from .register import (
    IcpResult,
    RigidTransform,
    ZAlignment,
    align_z,
    icp_rigid,
    merge_shells,
)
from .support import (
    SupportSpec,
    VoxelSolid,
    dilate,
    engrave_label,
    erode,
    make_support,
    protrusion_report,
    split_at_plane,
    split_for_build,
    voxelize,
    voxelize_surface,
)
from .synth import (
    FracturePlan,
    VesselProfile,
    band_split,
    fracture,
    generate_vessel,
    icosphere,
    make_box,
    write_scenario_manifest,
)

__version__ = "0.1.0"
