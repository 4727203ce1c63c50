"""lampdet: detection, identification and localization of planar lighting
elements in grayscale image sequences with known camera poses.

The pipeline constrains detected orientations to building-geometry surfaces,
filters poses by a normalized reprojection error, and aggregates per-frame
detections into a world-space lamp inventory.
"""

from .bim import BuildingModel, CeilingSurface, MountingKind, load_building, reference_plane
from .chamfer import (
    DirectionalDistanceField,
    EdgeMap,
    build_ddf,
    detect_edges,
    fdcm_score,
    refine_d2co,
    score_filter,
    select_model,
)
from .cluster import Cluster, EvalReport, ReferenceSet, cluster_detections, decide_cluster, evaluate
from .config import Mode, PipelineConfig, load_config
from .filtering import (
    Detection,
    LampState,
    apply_reprojection_filter,
    circular_virtual_point,
    classify_state,
    reprojection_error_circle,
    reprojection_error_polygon,
)
from .geom import (
    AlignmentFrame,
    CameraIntrinsics,
    ConstrainedPoseParams,
    Plane,
    RigidTransform,
    alignment_rotation,
    constrain_pose,
    log_map,
    project,
    restore_pose,
    rodrigues,
    z_axis_angle,
)
from .optim import LMOptions, LMResult, ResidualProblem, lm_minimize, numeric_jacobian
from .pipeline import run_detect, run_eval
from .pose import (
    Correspondence,
    LampModel,
    ObjectPose,
    PoseCandidate,
    estimate_circular_constrained,
    estimate_polygonal_constrained,
    load_models,
    prefilter_candidates,
    solve_pnp_planar,
)
from .shapes import (
    Blob,
    Contour,
    GrayImage,
    ShapeKind,
    ShapeObservation,
    classify_shape,
    extract_blobs,
    fit_ellipse,
    simplify_polygon,
    trace_contour,
)
from .synth import FrameRecord, SceneSpec, TrajectorySpec, generate_trajectory, render_frame

__version__ = "0.1.0"
