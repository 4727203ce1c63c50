"""Rotation parameterizations, the projection chain and plane-alignment machinery.

Conventions used throughout the package:

* World frame: right handed, z up, lengths in meters.
* Camera frame: x right, y down, z forward (optical axis).
* ``RigidTransform`` maps points of its source frame into its target frame:
  the model transform M maps model -> world, the view transform V maps
  world -> camera.  ``a.compose(b)`` applies ``b`` first, ``a`` second.
* Rotation vectors (so(3)) encode axis * angle, angle in radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidNormal, InvalidRotation

Z_AXIS = np.array([0.0, 0.0, 1.0])

_ORTHO_TOL = 1e-9


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    return a


def rodrigues(w) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (exponential map on SO(3))."""
    w = _as_vec3(w)
    theta = float(np.linalg.norm(w))
    K = np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])
    if theta < 1e-12:
        # second-order series keeps round trips exact near zero
        return np.eye(3) + K + 0.5 * (K @ K)
    K /= theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def log_map(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, canonical with norm <= pi."""
    R = np.asarray(R, dtype=float)
    _check_rotation(R)
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    axial = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-7:
        return 0.5 * axial
    if np.pi - theta < 1e-7:
        # near pi the axial part vanishes; recover axis from R + I
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[:, k] / axis[k]
        axis /= np.linalg.norm(axis)
        # pick the sign matching the (possibly tiny) axial part
        if axial @ axis < 0:
            axis = -axis
        return canonicalize_rotvec(axis * theta)
    return axial * (theta / (2.0 * np.sin(theta)))


def canonicalize_rotvec(w) -> np.ndarray:
    """Wrap a rotation vector so its angle lies in [0, pi], flipping the axis."""
    w = _as_vec3(w)
    theta = float(np.linalg.norm(w))
    if theta <= np.pi or theta < 1e-12:
        return w
    axis = w / theta
    theta = np.remainder(theta, 2.0 * np.pi)
    if theta > np.pi:
        theta = 2.0 * np.pi - theta
        axis = -axis
    return axis * theta


def _check_rotation(R: np.ndarray, tol: float = _ORTHO_TOL) -> None:
    if R.shape != (3, 3):
        raise InvalidRotation(f"expected 3x3 rotation, got shape {R.shape}")
    err = float(np.abs(R.T @ R - np.eye(3)).max())
    if err > tol or np.linalg.det(R) < 0.0:
        raise InvalidRotation(f"matrix is not orthonormal with det +1 (err={err:.2e})")


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: p_target = rotation @ p_source + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = _as_vec3(self.translation)
        _check_rotation(R)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_rotvec(w, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(rodrigues(w), _as_vec3(t))

    def apply(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -(self.rotation.T @ self.translation))

    def rotvec(self) -> np.ndarray:
        return log_map(self.rotation)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with optional Brown-Conrady distortion (k1,k2,p1,p2,k3)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        d = np.asarray(self.distortion, dtype=float).reshape(5)
        object.__setattr__(self, "distortion", d)

    @property
    def has_distortion(self) -> bool:
        return bool(np.any(self.distortion != 0.0))


@dataclass(frozen=True)
class Plane:
    """Plane through ``point`` with unit ``normal``."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        p = _as_vec3(self.point)
        n = _as_vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise InvalidNormal("plane normal must be unit length")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "normal", n)

    def signed_distance(self, p) -> float:
        return float(self.normal @ (_as_vec3(p) - self.point))


@dataclass(frozen=True)
class AlignmentFrame:
    """Pure rotation L taking the z axis onto a plane normal, with its rotation vector l."""

    normal: np.ndarray
    l: np.ndarray
    L: RigidTransform


@dataclass(frozen=True)
class ConstrainedPoseParams:
    """Four-parameter pose on the alignment manifold: z rotation wz plus translation t.

    The full pose is ``L o (Rz(wz), t)``; t is expressed in the plane-aligned frame.
    ``discarded`` keeps the projected-away (wx, wy) components for diagnostics.
    """

    wz: float
    t: np.ndarray
    frame: AlignmentFrame
    discarded: np.ndarray = field(default_factory=lambda: np.zeros(2))


def _distort(x: float, y: float, d: np.ndarray) -> tuple[float, float]:
    k1, k2, p1, p2, k3 = d
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return xd, yd


def project(camera: CameraIntrinsics, view: RigidTransform,
            model: RigidTransform, p) -> np.ndarray:
    """Project an object-frame point to pixel coordinates (u, v).

    Applies model -> world -> camera, perspective divide, distortion (if any)
    and the pixel mapping.  Raises ``BehindCamera`` when the camera-frame depth
    is not positive.
    """
    pc = view.apply(model.apply(_as_vec3(p)))
    if pc[2] <= 1e-9:
        raise BehindCamera(f"point depth {pc[2]:.3e} not in front of camera")
    x = pc[0] / pc[2]
    y = pc[1] / pc[2]
    if camera.has_distortion:
        x, y = _distort(x, y, camera.distortion)
    return np.array([camera.cx + camera.fx * x, camera.cy + camera.fy * y])


def project_many(camera: CameraIntrinsics, view: RigidTransform,
                 model: RigidTransform, pts: np.ndarray) -> np.ndarray:
    """Vectorized ``project`` for an (N, 3) array; raises if any point is behind."""
    pc = view.apply(model.apply(np.asarray(pts, dtype=float)))
    z = pc[:, 2]
    if np.any(z <= 1e-9):
        raise BehindCamera("one or more points behind the camera")
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


def pixel_to_ray(camera: CameraIntrinsics, uv) -> np.ndarray:
    """Camera-frame ray direction (x, y, 1) for a pixel, undoing distortion if present."""
    u, v = float(uv[0]), float(uv[1])
    x = (u - camera.cx) / camera.fx
    y = (v - camera.cy) / camera.fy
    if camera.has_distortion:
        # fixed-point undistort: start at the distorted coords and iterate
        xu, yu = x, y
        for _ in range(20):
            xd, yd = _distort(xu, yu, camera.distortion)
            xu += x - xd
            yu += y - yd
        x, y = xu, yu
    return np.array([x, y, 1.0])


def alignment_rotation(normal) -> AlignmentFrame:
    """Rotation aligning the z axis with a unit plane normal.

    The axis is z x n; the angle uses atan2(|z x n|, z . n), which is stable
    for obtuse normals.  The antiparallel case (n ~ -z) picks the x axis.
    """
    n = _as_vec3(normal)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise InvalidNormal(f"normal must be unit length, got |n|={np.linalg.norm(n):.6f}")
    lp = np.cross(Z_AXIS, n)
    s = float(np.linalg.norm(lp))
    c = float(Z_AXIS @ n)
    theta = float(np.arctan2(s, c))
    if s < 1e-9:
        l = np.array([np.pi, 0.0, 0.0]) if c < 0.0 else np.zeros(3)
    else:
        l = lp * (theta / s)
    return AlignmentFrame(normal=n, l=l, L=RigidTransform.from_rotvec(l))


def constrain_pose(M: RigidTransform, frame: AlignmentFrame) -> ConstrainedPoseParams:
    """Project a pose onto the alignment manifold of ``frame``.

    Expresses the pose in the plane-aligned frame (L^-1 o M), takes the log of
    its rotation and keeps only the z component; the x/y components are the
    projected-away tilt, reported in ``discarded``.
    """
    aligned = frame.L.inverse().compose(M)
    w = log_map(aligned.rotation)
    return ConstrainedPoseParams(
        wz=float(w[2]),
        t=aligned.translation.copy(),
        frame=frame,
        discarded=w[:2].copy(),
    )


def restore_pose(params: ConstrainedPoseParams) -> RigidTransform:
    """Rebuild the full pose L o (Rz(wz), t); its z axis is exactly the frame normal."""
    Mp = RigidTransform.from_rotvec(np.array([0.0, 0.0, params.wz]), params.t)
    return params.frame.L.compose(Mp)


def z_axis_angle(M: RigidTransform, normal) -> float:
    """Angle in [0, pi] between the pose's rotated z axis and a direction."""
    n = _as_vec3(normal)
    n = n / np.linalg.norm(n)
    z_world = M.rotation @ Z_AXIS
    return float(np.arccos(np.clip(z_world @ n, -1.0, 1.0)))
