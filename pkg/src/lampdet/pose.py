"""Initial pose candidates from shape observations.

Polygonal shapes go through planar PnP (homography seed + LM polish), then a
projection onto the plane-alignment manifold followed by a re-minimization
with only four free parameters.  Elliptical shapes go through a circle-pose
least squares formulated in the plane-aligned frame, where fixing the normal
is just not optimizing it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .bim import MountingKind
from .errors import (
    DegenerateConfiguration,
    EstimationFailed,
    MissingFile,
    NonFiniteResidual,
    NoValidPose,
    RaysParallelToPlane,
    SchemaError,
    ShapeModelMismatch,
)
from .geom import (
    AlignmentFrame,
    CameraIntrinsics,
    Plane,
    RigidTransform,
    alignment_rotation,
    constrain_pose,
    pixel_to_ray,
    restore_pose,
    rodrigues,
    z_axis_angle,
)
from .optim import LMOptions, LMResult, ResidualProblem, lm_minimize
from .shapes import ShapeKind, ShapeObservation, shoelace_area


@dataclass(frozen=True)
class ObjectPose:
    """Model-to-world transform with its rotation-vector parameterization."""

    M: RigidTransform
    w: np.ndarray

    @staticmethod
    def from_transform(M: RigidTransform) -> "ObjectPose":
        return ObjectPose(M=M, w=M.rotvec())


@dataclass(frozen=True)
class LampModel:
    """Lamp database entry: planar face geometry plus a 3D edge template."""

    id: str
    face_kind: ShapeKind
    mounting: MountingKind
    face_vertices: Optional[np.ndarray] = None  # (N, 3) on z=0, polygon faces
    radius: float = 0.0                         # circle faces, meters
    edge_template: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))

    def __post_init__(self):
        if self.face_kind is ShapeKind.POLYGONAL:
            v = np.asarray(self.face_vertices, dtype=float)
            if v.ndim != 2 or v.shape[0] < 4 or v.shape[1] != 3:
                raise SchemaError(f"model {self.id}: polygon face needs >= 4 3D vertices")
            if np.abs(v[:, 2]).max() > 1e-9:
                raise SchemaError(f"model {self.id}: face vertices must lie on z=0")
            object.__setattr__(self, "face_vertices", v)
        else:
            if self.radius <= 0:
                raise SchemaError(f"model {self.id}: circle radius must be positive")
        t = np.asarray(self.edge_template, dtype=float)
        if t.size == 0:
            raise SchemaError(f"model {self.id}: edge template must not be empty")
        object.__setattr__(self, "edge_template", t.reshape(-1, 2, 3))

    @property
    def nominal_size(self) -> float:
        """Circumscribed radius of the face, used to scale templates across models."""
        if self.face_kind is ShapeKind.CIRCULAR:
            return self.radius
        return float(np.linalg.norm(self.face_vertices[:, :2], axis=1).max())

    def face_boundary(self, n_circle: int = 64) -> np.ndarray:
        """(K, 3) closed boundary samples of the face in model coordinates."""
        if self.face_kind is ShapeKind.POLYGONAL:
            return self.face_vertices.copy()
        t = np.linspace(0.0, 2.0 * np.pi, n_circle, endpoint=False)
        return np.column_stack([
            self.radius * np.cos(t), self.radius * np.sin(t), np.zeros_like(t)])


def _segments_from_polygon(vertices: np.ndarray) -> np.ndarray:
    nxt = np.roll(vertices, -1, axis=0)
    return np.stack([vertices, nxt], axis=1)


def rect_lamp_model(model_id: str, width: float, height: float,
                    mounting: MountingKind) -> LampModel:
    """Rectangular face centered at the origin; template = the face outline."""
    w2, h2 = width / 2.0, height / 2.0
    verts = np.array([
        [-w2, -h2, 0.0], [w2, -h2, 0.0], [w2, h2, 0.0], [-w2, h2, 0.0]])
    return LampModel(id=model_id, face_kind=ShapeKind.POLYGONAL, mounting=mounting,
                     face_vertices=verts, edge_template=_segments_from_polygon(verts))


def circle_lamp_model(model_id: str, radius: float, mounting: MountingKind,
                      n_segments: int = 24) -> LampModel:
    """Circular face; template = a closed polyline approximating the rim."""
    t = np.linspace(0.0, 2.0 * np.pi, n_segments, endpoint=False)
    rim = np.column_stack([radius * np.cos(t), radius * np.sin(t), np.zeros_like(t)])
    return LampModel(id=model_id, face_kind=ShapeKind.CIRCULAR, mounting=mounting,
                     radius=radius, edge_template=_segments_from_polygon(rim))


def model_from_json(doc: dict) -> LampModel:
    try:
        face = doc["face"]
        mounting = MountingKind.from_json(doc["mounting"])
        template = np.asarray(doc["edge_template"], dtype=float)
        if face["kind"] == "polygon":
            verts = np.asarray(face["vertices"], dtype=float)
            if verts.shape[1] == 2:
                verts = np.column_stack([verts, np.zeros(len(verts))])
            return LampModel(id=doc["id"], face_kind=ShapeKind.POLYGONAL,
                             mounting=mounting, face_vertices=verts,
                             edge_template=template)
        if face["kind"] == "circle":
            return LampModel(id=doc["id"], face_kind=ShapeKind.CIRCULAR,
                             mounting=mounting, radius=float(face["radius"]),
                             edge_template=template)
    except KeyError as exc:
        raise SchemaError(f"lamp model missing field {exc}") from exc
    raise SchemaError(f"unknown face kind {face.get('kind')!r}")


def model_to_json(m: LampModel) -> dict:
    if m.face_kind is ShapeKind.POLYGONAL:
        face = {"kind": "polygon", "vertices": m.face_vertices.tolist()}
    else:
        face = {"kind": "circle", "radius": m.radius}
    return {
        "id": m.id,
        "face": face,
        "edge_template": m.edge_template.tolist(),
        "mounting": m.mounting.to_json(),
    }


def load_models(path) -> list[LampModel]:
    """Read the lamp database (``models.json``, a {"models": [...]} document)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"models file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"models file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "models" not in doc:
        raise SchemaError("models document must have a 'models' list")
    models = [model_from_json(entry) for entry in doc["models"]]
    if not models:
        raise SchemaError("models list is empty")
    return models


@dataclass(frozen=True)
class Correspondence:
    p_obj: np.ndarray  # (3,) model frame, meters
    p_img: np.ndarray  # (2,) pixels


@dataclass(frozen=True)
class CircleEstimate:
    """Circle center and normal in the plane-aligned frame, with the fit residual."""

    center: np.ndarray
    normal: np.ndarray
    residual: float


@dataclass(frozen=True)
class PoseCandidate:
    pose: ObjectPose
    model_id: str
    shape: ShapeObservation
    alignment: AlignmentFrame
    plane: Plane
    initial_cost: float
    constrained: bool
    tilt_before_projection: float
    correspondences: Optional[tuple] = None  # polygon vertex matches
    solves: tuple = ()                       # LMResults for instrumentation


def _safe_project_many(camera: CameraIntrinsics, view: RigidTransform,
                       model: RigidTransform, pts: np.ndarray) -> np.ndarray:
    """Projection with a depth floor so optimizer probes never go non-finite."""
    pc = view.apply(model.apply(pts))
    z = np.maximum(pc[:, 2], 1e-6)
    x = pc[:, 0] / z
    y = pc[:, 1] / z
    if camera.has_distortion:
        k1, k2, p1, p2, k3 = camera.distortion
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x, y = xd, yd
    return np.column_stack([camera.cx + camera.fx * x, camera.cy + camera.fy * y])


# ---------------------------------------------------------------------------
# planar PnP
# ---------------------------------------------------------------------------

def _normalize_points(pts: np.ndarray):
    mean = pts.mean(axis=0)
    d = np.linalg.norm(pts - mean, axis=1).mean()
    if d < 1e-12:
        raise DegenerateConfiguration("points coincide")
    s = np.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * mean[0]], [0.0, s, -s * mean[1]], [0.0, 0.0, 1.0]])
    return (pts - mean) * s, T


def _homography_dlt(obj_xy: np.ndarray, img_xy: np.ndarray) -> np.ndarray:
    src, T_src = _normalize_points(obj_xy)
    dst, T_dst = _normalize_points(img_xy)
    n = len(src)
    A = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = src[i]
        u, v = dst[i]
        A[2 * i] = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]
        A[2 * i + 1] = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]
    _, s, Vt = np.linalg.svd(A)
    if s[-2] < 1e-10:
        raise DegenerateConfiguration("homography system is rank deficient")
    H = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(T_dst) @ H @ T_src
    return H / H[2, 2]


def _check_non_collinear(obj_pts: np.ndarray) -> None:
    xy = obj_pts[:, :2]
    centered = xy - xy.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] < 1e-9 * max(s[0], 1.0):
        raise DegenerateConfiguration("object points are collinear")


def _pose_residual_problem(camera: CameraIntrinsics, view: RigidTransform,
                           obj_pts: np.ndarray, img_pts: np.ndarray) -> ResidualProblem:
    """Reprojection residuals over a direct (w, t) pose parameterization."""

    def evaluate(x):
        M = RigidTransform(rodrigues(x[:3]), x[3:])
        uv = _safe_project_many(camera, view, M, obj_pts)
        return (uv - img_pts).ravel()

    return ResidualProblem(evaluate, 6, 2 * len(obj_pts))


def aligned_pose_residual_problem(camera: CameraIntrinsics, view: RigidTransform,
                                  frame: AlignmentFrame, obj_pts: np.ndarray,
                                  img_pts: np.ndarray) -> ResidualProblem:
    """Reprojection residuals over the plane-aligned parameterization.

    Parameters are (wx, wy, wz, tx, ty, tz) of the aligned pose; the full
    model transform is L o (R(w), t).  Masking (wx, wy) at zero realizes the
    four-parameter constrained problem while keeping the same residuals.
    """

    def evaluate(x):
        Mp = RigidTransform(rodrigues(x[:3]), x[3:])
        uv = _safe_project_many(camera, view, frame.L.compose(Mp), obj_pts)
        return (uv - img_pts).ravel()

    return ResidualProblem(evaluate, 6, 2 * len(obj_pts))


def solve_pnp_planar(correspondences, camera: CameraIntrinsics,
                     view: RigidTransform,
                     opts: LMOptions = LMOptions()) -> tuple[RigidTransform, float, LMResult]:
    """Unconstrained pose from >= 4 coplanar correspondences.

    Homography decomposition seeds a full 6-DOF LM polish.  Returns the pose,
    the reprojection RMS in pixels and the solver record.
    """
    obj_pts = np.array([np.asarray(c.p_obj, dtype=float) for c in correspondences])
    img_pts = np.array([np.asarray(c.p_img, dtype=float) for c in correspondences])
    if len(obj_pts) < 4:
        raise DegenerateConfiguration("need at least 4 correspondences")
    if np.abs(obj_pts[:, 2]).max() > 1e-9:
        raise DegenerateConfiguration("planar PnP expects object points on z=0")
    _check_non_collinear(obj_pts)

    # undistorted pixels for the linear seed; the polish uses the full model
    if camera.has_distortion:
        und = np.array([pixel_to_ray(camera, uv) for uv in img_pts])
        img_lin = np.column_stack([camera.cx + camera.fx * und[:, 0] / und[:, 2],
                                   camera.cy + camera.fy * und[:, 1] / und[:, 2]])
    else:
        img_lin = img_pts
    if shoelace_area(img_lin) < 1e-6:
        raise DegenerateConfiguration("image points are degenerate")

    H = _homography_dlt(obj_pts[:, :2], img_lin)
    K = np.array([[camera.fx, 0.0, camera.cx],
                  [0.0, camera.fy, camera.cy],
                  [0.0, 0.0, 1.0]])
    Hn = np.linalg.inv(K) @ H
    h1, h2, h3 = Hn[:, 0], Hn[:, 1], Hn[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    r1, r2, t = lam * h1, lam * h2, lam * h3
    centroid = obj_pts.mean(axis=0)
    if (np.column_stack([r1, r2, np.cross(r1, r2)]) @ centroid + t)[2] < 0:
        r1, r2, t = -r1, -r2, -t
    R_approx = np.column_stack([r1, r2, np.cross(r1, r2)])
    U, _, Vt = np.linalg.svd(R_approx)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, 2] = -U[:, 2]
        R = U @ Vt
    M_cam = RigidTransform(R, t)
    M_seed = view.inverse().compose(M_cam)
    depths = view.apply(M_seed.apply(obj_pts))[:, 2]
    if np.any(depths <= 0):
        raise NoValidPose("homography seed places points behind the camera")

    problem = _pose_residual_problem(camera, view, obj_pts, img_pts)
    x0 = np.concatenate([M_seed.rotvec(), M_seed.translation])
    result = lm_minimize(problem, x0, opts=opts, tag="pnp_polish")
    M = RigidTransform(rodrigues(result.x_opt[:3]), result.x_opt[3:])
    depths = view.apply(M.apply(obj_pts))[:, 2]
    if np.any(depths <= 0):
        raise NoValidPose("refined pose places points behind the camera")
    rms = float(np.sqrt(result.final_cost / len(obj_pts)))
    return M, rms, result


def _match_correspondences(shape_poly: np.ndarray, face: np.ndarray,
                           camera: CameraIntrinsics, view: RigidTransform,
                           opts: LMOptions, prefer_normal=None):
    """Try all cyclic shifts and both orientations; keep the cheapest PnP fit.

    Mirror-symmetric faces make the planar flip ambiguity exact (reversed
    vertex order admits an equal-cost pose with the z axis flipped), so among
    near-tied hypotheses the one closest to the reference-plane normal wins.
    """
    n = len(face)
    hypotheses = []
    for orientation in (1, -1):
        img = shape_poly if orientation == 1 else shape_poly[::-1]
        for shift in range(n):
            img_k = np.roll(img, -shift, axis=0)
            corrs = tuple(Correspondence(p_obj=face[i], p_img=img_k[i]) for i in range(n))
            try:
                M, rms, res = solve_pnp_planar(corrs, camera, view, opts)
            except (DegenerateConfiguration, NoValidPose, NonFiniteResidual):
                continue
            hypotheses.append((corrs, M, rms, res))
    if not hypotheses:
        raise NoValidPose("no correspondence hypothesis produced a valid pose")
    best_cost = min(h[3].final_cost for h in hypotheses)
    band = best_cost + 1e-9 + 1e-6 * best_cost
    tied = [h for h in hypotheses if h[3].final_cost <= band]
    if prefer_normal is not None and len(tied) > 1:
        tied.sort(key=lambda h: z_axis_angle(h[1], prefer_normal))
        return tied[0]
    tied.sort(key=lambda h: h[3].final_cost)
    return tied[0]


def estimate_polygonal_constrained(shape: ShapeObservation, model: LampModel,
                                   camera: CameraIntrinsics, view: RigidTransform,
                                   plane: Plane, constrained: bool = True,
                                   opts: LMOptions = LMOptions()) -> PoseCandidate:
    """Pose candidate for a polygonal shape observation.

    Steps: vertex correspondence search, unconstrained planar PnP, projection
    onto the plane-aligned manifold, and a 4-DOF re-minimization of the
    reprojection cost (skipped when ``constrained`` is off).
    """
    if shape.kind is not ShapeKind.POLYGONAL or shape.polygon is None:
        raise ShapeModelMismatch("shape is not polygonal")
    if model.face_kind is not ShapeKind.POLYGONAL:
        raise ShapeModelMismatch(f"model {model.id} has no polygon face")
    face = model.face_vertices
    if len(shape.polygon) != len(face):
        raise ShapeModelMismatch(
            f"shape has {len(shape.polygon)} vertices, model face has {len(face)}")

    # the unconstrained baseline has no building prior: flips resolve by cost
    # alone there, while constrained mode disambiguates toward the plane
    corrs, M_free, _, pnp_result = _match_correspondences(
        shape.polygon, face, camera, view, opts,
        prefer_normal=plane.normal if constrained else None)
    frame = alignment_rotation(plane.normal)
    tilt = z_axis_angle(M_free, plane.normal)
    solves = [pnp_result]

    if not constrained:
        return PoseCandidate(
            pose=ObjectPose.from_transform(M_free), model_id=model.id, shape=shape,
            alignment=frame, plane=plane, initial_cost=pnp_result.final_cost,
            constrained=False, tilt_before_projection=tilt,
            correspondences=corrs, solves=tuple(solves))

    params0 = constrain_pose(M_free, frame)
    obj_pts = np.array([c.p_obj for c in corrs])
    img_pts = np.array([c.p_img for c in corrs])
    problem = aligned_pose_residual_problem(camera, view, frame, obj_pts, img_pts)
    x0 = np.array([0.0, 0.0, params0.wz, *params0.t])
    mask = np.array([False, False, True, True, True, True])
    result = lm_minimize(problem, x0, free_mask=mask, opts=opts, tag="pnp_constrained")
    solves.append(result)
    params = replace(params0, wz=float(result.x_opt[2]), t=result.x_opt[3:].copy())
    M = restore_pose(params)
    return PoseCandidate(
        pose=ObjectPose.from_transform(M), model_id=model.id, shape=shape,
        alignment=frame, plane=plane, initial_cost=result.final_cost,
        constrained=True, tilt_before_projection=tilt,
        correspondences=corrs, solves=tuple(solves))


# ---------------------------------------------------------------------------
# circle pose
# ---------------------------------------------------------------------------

def circle_distance_residuals(cam_center_aligned: np.ndarray,
                              ray_dirs_aligned: np.ndarray, radius: float,
                              constrained: bool) -> ResidualProblem:
    """Ray/plane-intersection distance residuals for the circle fit.

    Unconstrained parameters are (w1, w2, w3, cx, cy, cz) with the circle
    normal R(w) @ z, unit by construction; the constrained problem masks the
    rotation block so the normal stays at z.  One residual per contour ray:
    distance from the plane intersection to the center, minus the radius.
    """
    pc = np.asarray(cam_center_aligned, dtype=float)
    F = np.asarray(ray_dirs_aligned, dtype=float)

    def evaluate(x):
        n = rodrigues(x[:3]) @ np.array([0.0, 0.0, 1.0]) if not constrained \
            else np.array([0.0, 0.0, 1.0])
        center = x[3:]
        denom = F @ n
        denom = np.where(np.abs(denom) < 1e-12, np.copysign(1e-12, denom), denom)
        t = (n @ (center - pc)) / denom
        q = pc + t[:, None] * F
        return np.linalg.norm(q - center, axis=1) - radius

    return ResidualProblem(evaluate, 6, len(F))


def estimate_circle_aligned(cam_center_aligned, ray_dirs_aligned, radius: float,
                            center_seed, constrained: bool,
                            opts: LMOptions = LMOptions(),
                            tag: str = "") -> tuple[CircleEstimate, LMResult]:
    """Fit a circle center (and optionally its normal) in the aligned frame."""
    F = np.asarray(ray_dirs_aligned, dtype=float)
    z = np.array([0.0, 0.0, 1.0])
    parallel = np.abs(F @ z) < 1e-12
    if parallel.sum() > 0.5 * len(F):
        raise RaysParallelToPlane(
            f"{parallel.sum()}/{len(F)} rays parallel to the circle plane")
    problem = circle_distance_residuals(cam_center_aligned, F, radius, constrained)
    x0 = np.array([0.0, 0.0, 0.0, *np.asarray(center_seed, dtype=float)])
    mask = np.array([False, False, False, True, True, True]) if constrained \
        else np.ones(6, dtype=bool)
    try:
        result = lm_minimize(problem, x0, free_mask=mask, opts=opts, tag=tag)
    except NonFiniteResidual as exc:
        raise EstimationFailed(f"circle fit diverged: {exc}") from exc
    normal = rodrigues(result.x_opt[:3]) @ z
    return CircleEstimate(center=result.x_opt[3:].copy(), normal=normal,
                          residual=result.final_cost), result


def estimate_circular_constrained(contour_points, model: LampModel,
                                  camera: CameraIntrinsics, view: RigidTransform,
                                  plane: Plane, constrained: bool = True,
                                  opts: LMOptions = LMOptions(),
                                  shape: Optional[ShapeObservation] = None) -> PoseCandidate:
    """Pose candidate for an elliptical shape observation.

    Viewing rays are rotated into the plane-aligned frame where the
    constraint is simply a fixed z normal.  An unconstrained fit always runs
    first: it both seeds the constrained fit and provides the tilt of the
    unfiltered estimate for the candidate prefilter.  The in-plane rotation is
    unobservable for a circle and fixed at zero.
    """
    if model.face_kind is not ShapeKind.CIRCULAR:
        raise ShapeModelMismatch(f"model {model.id} has no circular face")
    pts = np.asarray(contour_points, dtype=float)
    if len(pts) < 6:
        raise ShapeModelMismatch("need at least 6 contour points")

    frame = alignment_rotation(plane.normal)
    Rw2a = frame.L.rotation.T  # world -> aligned (pure rotation)
    cam_center_world = view.inverse().translation
    ray_world = np.array([view.rotation.T @ pixel_to_ray(camera, uv) for uv in pts])
    pc_aligned = Rw2a @ cam_center_world
    F_aligned = ray_world @ Rw2a.T

    center_seed = _circle_center_seed(pts, camera, view, plane, model.radius, Rw2a)

    est_free, res_free = estimate_circle_aligned(
        pc_aligned, F_aligned, model.radius, center_seed, constrained=False,
        opts=opts, tag="circle_seed" if constrained else "circle_unconstrained")
    normal_world_free = frame.L.rotation @ est_free.normal
    if normal_world_free @ plane.normal < 0:
        normal_world_free = -normal_world_free  # normal sign is unobservable
    tilt = float(np.arccos(np.clip(normal_world_free @ plane.normal, -1.0, 1.0)))
    solves = [res_free]

    if constrained:
        est, res = estimate_circle_aligned(
            pc_aligned, F_aligned, model.radius, est_free.center, constrained=True,
            opts=opts, tag="circle_constrained")
        solves.append(res)
        center_world = frame.L.rotation @ est.center
        M = RigidTransform(frame.L.rotation, center_world)
        cost = est.residual
    else:
        center_world = frame.L.rotation @ est_free.center
        M = RigidTransform(alignment_rotation(normal_world_free).L.rotation, center_world)
        cost = est_free.residual

    return PoseCandidate(
        pose=ObjectPose.from_transform(M), model_id=model.id,
        shape=shape if shape is not None else _circle_shape_stub(pts),
        alignment=frame, plane=plane, initial_cost=cost, constrained=constrained,
        tilt_before_projection=tilt, correspondences=None, solves=tuple(solves))


def _circle_center_seed(pts: np.ndarray, camera: CameraIntrinsics,
                        view: RigidTransform, plane: Plane, radius: float,
                        Rw2a: np.ndarray) -> np.ndarray:
    """Seed the circle center: central ray intersected with the reference plane,
    falling back to an apparent-size depth when the ray runs along the plane."""
    center_px = pts.mean(axis=0)
    d_world = view.rotation.T @ pixel_to_ray(camera, center_px)
    c_world = view.inverse().translation
    denom = plane.normal @ d_world
    if abs(denom) > 1e-9:
        t = (plane.normal @ (plane.point - c_world)) / denom
        if t > 1e-6:
            return Rw2a @ (c_world + t * d_world)
    r_px = float(np.linalg.norm(pts - center_px, axis=1).mean())
    depth = camera.fx * radius / max(r_px, 1.0)
    return Rw2a @ (c_world + depth * d_world / np.linalg.norm(d_world))


def _circle_shape_stub(pts: np.ndarray) -> ShapeObservation:
    from .shapes import Contour
    closed = np.vstack([pts, pts[:1]])
    perimeter = float(np.sqrt((np.diff(closed, axis=0) ** 2).sum(axis=1)).sum())
    area = shoelace_area(pts)
    contour = Contour(points=pts.copy(), perimeter=perimeter, area=max(area, 1.0))
    return ShapeObservation(kind=ShapeKind.CIRCULAR, area=max(area, 1.0), contour=contour)


# ---------------------------------------------------------------------------
# candidate prefilter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateLimits:
    """Thresholds for the candidate prefilter; defaults are deliberately loose."""

    max_tilt_rad: float = np.deg2rad(25.0)
    height_band_m: float = 0.3
    size_ratio_min: float = 0.5
    size_ratio_max: float = 2.0


def projected_face_area(candidate: PoseCandidate, model: LampModel,
                        camera: CameraIntrinsics, view: RigidTransform) -> float:
    boundary = model.face_boundary()
    uv = _safe_project_many(camera, view, candidate.pose.M, boundary)
    return shoelace_area(uv)


def prefilter_candidates(candidates, models_by_id: dict, camera: CameraIntrinsics,
                         view: RigidTransform,
                         limits: CandidateLimits = CandidateLimits()) -> list:
    """Keep candidates with plausible tilt, height and projected size."""
    kept = []
    for cand in candidates:
        if cand.tilt_before_projection > limits.max_tilt_rad:
            continue
        if abs(cand.plane.signed_distance(cand.pose.M.translation)) > limits.height_band_m:
            continue
        model = models_by_id[cand.model_id]
        area = projected_face_area(cand, model, camera, view)
        ratio = area / max(cand.shape.area, 1e-9)
        if not (limits.size_ratio_min <= ratio <= limits.size_ratio_max):
            continue
        kept.append(cand)
    return kept
