"""Reprojection-error pose filter and lamp state classification.

Orientation alignment can produce poses that no longer match the observed
shape; the area-normalized mean squared reprojection error catches those.
Polygonal shapes reuse their vertex correspondences; circular shapes get
virtual correspondences on the model circumference.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import (
    ProjectedAtCenter,
    RayParallelToPlane,
    StateUndetermined,
    TooManyDegeneratePoints,
)
from .geom import CameraIntrinsics, RigidTransform, pixel_to_ray, project_many
from .pose import LampModel, ObjectPose
from .raster import polygon_mask
from .shapes import GrayImage, ShapeKind

THRESHOLD_POLYGONAL = 0.015
THRESHOLD_CIRCULAR = 0.035

DEGENERATE_POINT_QUOTA = 0.2


class LampState(Enum):
    ON = "on"
    OFF = "off"


@dataclass(frozen=True)
class Detection:
    """Frame-level detection after refinement."""

    frame: int
    model_id: str
    pose: ObjectPose
    state: Optional[LampState]
    chamfer_score: float
    reprojection_error: Optional[float]  # 1/px^2-normalized, None if not computable
    shape_area: float
    shape_kind: ShapeKind
    detection_id: str = ""

    @property
    def world_position(self) -> np.ndarray:
        return self.pose.M.translation


@dataclass(frozen=True)
class ReprojectionStats:
    """Per-point squared pixel errors and the normalized error of the pose."""

    squared_errors: np.ndarray
    n_points: int
    area: float
    eps: float
    n_excluded: int = 0


def normalized_error(squared_errors, area: float) -> float:
    """Area-normalized mean squared error: sum(e^2) / (N * A)."""
    sq = np.asarray(squared_errors, dtype=float)
    if sq.size == 0:
        raise ValueError("no reprojection errors to average")
    if area <= 0:
        raise ValueError("shape area must be positive")
    return float(sq.sum() / (sq.size * area))


def reprojection_error_polygon(pose: RigidTransform, correspondences,
                               camera: CameraIntrinsics, view: RigidTransform,
                               area: float) -> ReprojectionStats:
    """Normalized reprojection error of matched polygon vertices."""
    obj = np.array([np.asarray(c.p_obj, dtype=float) for c in correspondences])
    img = np.array([np.asarray(c.p_img, dtype=float) for c in correspondences])
    uv = project_many(camera, view, pose, obj)
    sq = ((uv - img) ** 2).sum(axis=1)
    return ReprojectionStats(squared_errors=sq, n_points=len(sq), area=area,
                             eps=normalized_error(sq, area))


def circular_virtual_point(img_pt, pose: RigidTransform, camera: CameraIntrinsics,
                           view: RigidTransform, radius: float) -> np.ndarray:
    """Virtual object point for a circular shape.

    Back-projects the image point onto the object z=0 plane and radially
    snaps it to the circumference, staying in the same quadrant (coordinates
    keep their signs; zeros stay on the axis).
    """
    T = view.compose(pose)  # model -> camera
    R_inv = T.rotation.T
    p_c = R_inv @ (-T.translation)              # camera center, object frame
    f = R_inv @ pixel_to_ray(camera, img_pt)    # ray direction, object frame
    if abs(f[2]) < 1e-12:
        raise RayParallelToPlane("viewing ray parallel to the object plane")
    t = -p_c[2] / f[2]
    proj = p_c + t * f
    r = float(np.hypot(proj[0], proj[1]))
    if r < 1e-12:
        raise ProjectedAtCenter("radial direction undefined at the circle center")
    return np.array([radius * proj[0] / r, radius * proj[1] / r, 0.0])


def reprojection_error_circle(pose: RigidTransform, contour_points,
                              camera: CameraIntrinsics, view: RigidTransform,
                              radius: float, area: float) -> ReprojectionStats:
    """Normalized reprojection error of a circle via virtual correspondences.

    Contour points whose back-projection is degenerate are excluded; more
    than 20% exclusions raise ``TooManyDegeneratePoints``.
    """
    pts = np.asarray(contour_points, dtype=float)
    virtual = []
    observed = []
    excluded = 0
    for uv in pts:
        try:
            virtual.append(circular_virtual_point(uv, pose, camera, view, radius))
            observed.append(uv)
        except (RayParallelToPlane, ProjectedAtCenter):
            excluded += 1
    if excluded > DEGENERATE_POINT_QUOTA * len(pts) or not virtual:
        raise TooManyDegeneratePoints(
            f"{excluded}/{len(pts)} contour points failed back-projection")
    uv_proj = project_many(camera, view, pose, np.array(virtual))
    sq = ((uv_proj - np.array(observed)) ** 2).sum(axis=1)
    return ReprojectionStats(squared_errors=sq, n_points=len(sq), area=area,
                             eps=normalized_error(sq, area), n_excluded=excluded)


def apply_reprojection_filter(detections, thr_polygonal: float = THRESHOLD_POLYGONAL,
                              thr_circular: float = THRESHOLD_CIRCULAR) -> list:
    """Keep detections whose normalized error is within the kind-specific
    threshold; order preserved, detections without an error value dropped."""
    kept = []
    for d in detections:
        if d.reprojection_error is None:
            continue
        thr = thr_polygonal if d.shape_kind is ShapeKind.POLYGONAL else thr_circular
        if d.reprojection_error <= thr:
            kept.append(d)
    return kept


def classify_state(img: GrayImage, pose: RigidTransform, model: LampModel,
                   camera: CameraIntrinsics, view: RigidTransform,
                   on_threshold: float = 200.0) -> LampState:
    """On/off decision by mean intensity inside the projected lamp face."""
    boundary = model.face_boundary()
    depths = view.apply(pose.apply(boundary))[:, 2]
    if np.any(depths <= 1e-9):
        raise StateUndetermined("face reaches behind the camera")
    uv = project_many(camera, view, pose, boundary)
    mask = polygon_mask(uv, img.width, img.height)
    n = int(mask.sum())
    if n < 3:
        raise StateUndetermined(f"projected face covers only {n} pixels")
    mean = float(img.data[mask].mean())
    return LampState.ON if mean >= on_threshold else LampState.OFF
