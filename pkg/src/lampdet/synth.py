"""Synthetic image sequences with exact ground truth.

Scenes place lamps on building ceilings (or hanging below them), a camera
walks a polyline at fixed speed and height with an upward pitch, and each
frame is rasterized with optional intensity noise, boundary jitter and
distractor blobs.  Every random quantity is drawn from a generator seeded by
(scene seed, frame index), so datasets are reproducible byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bim import BuildingModel, building_from_json, building_to_json, reference_plane
from .errors import InvalidPath, SchemaError
from .geom import CameraIntrinsics, RigidTransform, alignment_rotation, project_many, rodrigues
from .pgm import write_pgm
from .pose import LampModel
from .raster import polygon_mask
from .shapes import GrayImage, ShapeKind, shoelace_area

OFF_INTENSITY = 60   # visible to the edge detector, below the blob threshold
ON_INTENSITY = 255


@dataclass(frozen=True)
class LampInstance:
    model_id: str
    position: np.ndarray     # (3,) meters; z snaps to the mounting plane
    wz: float = 0.0          # in-plane rotation, radians
    state: str = "on"
    tilt_deg: float = 0.0    # ground-truth deviation from the mounting plane
    tilt_axis_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float).reshape(3))
        if self.state not in ("on", "off"):
            raise SchemaError(f"lamp state must be 'on' or 'off', got {self.state!r}")


@dataclass(frozen=True)
class SceneSpec:
    building: BuildingModel
    camera: CameraIntrinsics
    lamps: tuple
    ambient: int = 20
    noise_sigma: float = 0.0
    jitter_sigma: float = 0.0
    distractors: int = 0
    seed: int = 0


@dataclass(frozen=True)
class TrajectorySpec:
    path: np.ndarray          # (K, 2) waypoints in the floor plane, meters
    speed: float = 1.0        # m/s
    frame_rate: float = 10.0  # frames per second
    height: float = 1.5       # camera height above the floor, meters
    pitch_up_deg: float = 60.0

    def __post_init__(self):
        p = np.asarray(self.path, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2:
            raise InvalidPath("path must be a (K, 2) polyline")
        object.__setattr__(self, "path", p)
        if self.speed <= 0 or self.frame_rate <= 0:
            raise InvalidPath("speed and frame rate must be positive")


@dataclass(frozen=True)
class GroundTruthLamp:
    lamp_index: int
    model_id: str
    pose: RigidTransform
    state: str
    projected_area: float


@dataclass(frozen=True)
class FrameRecord:
    image: GrayImage
    view: RigidTransform
    gt: tuple  # GroundTruthLamp entries for fully visible lamps


def lamp_world_pose(building: BuildingModel, model: LampModel,
                    lamp: LampInstance) -> RigidTransform:
    """Ground-truth pose respecting the model's mounting.

    The lamp z position snaps onto its mounting plane; orientation is the
    plane alignment, an in-plane rotation, and an optional tilt perturbation.
    """
    plane = reference_plane(building, lamp.position, model.mounting)
    # snap the position onto the plane along its normal
    p = lamp.position - plane.normal * plane.signed_distance(lamp.position)
    frame = alignment_rotation(plane.normal)
    tilt = np.deg2rad(lamp.tilt_deg)
    phase = np.deg2rad(lamp.tilt_axis_deg)
    R_tilt = rodrigues([tilt * np.cos(phase), tilt * np.sin(phase), 0.0])
    R = frame.L.rotation @ R_tilt @ rodrigues([0.0, 0.0, lamp.wz])
    return RigidTransform(R, p)


def generate_trajectory(spec: TrajectorySpec) -> list[RigidTransform]:
    """View transforms sampled along the path at speed/frame_rate spacing."""
    path = spec.path
    if len(path) < 2:
        raise InvalidPath("path needs at least 2 points")
    seg = np.diff(path, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    total = float(seg_len.sum())
    if total < 1e-9:
        raise InvalidPath("path has zero length")
    spacing = spec.speed / spec.frame_rate
    n = int(np.floor(total / spacing)) + 1
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    pitch = np.deg2rad(spec.pitch_up_deg)
    views = []
    for i in range(n):
        s = min(i * spacing, total)
        j = int(np.searchsorted(cum[1:], s, side="right"))
        j = min(j, len(seg) - 1)
        t = (s - cum[j]) / seg_len[j] if seg_len[j] > 0 else 0.0
        xy = path[j] + t * seg[j]
        heading = seg[j] / seg_len[j]
        pos = np.array([xy[0], xy[1], spec.height])
        forward = np.array([np.cos(pitch) * heading[0],
                            np.cos(pitch) * heading[1],
                            np.sin(pitch)])
        # camera basis: x right, y down, z forward (right = forward x up)
        right = np.cross(forward, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.vstack([right, down, forward])
        views.append(RigidTransform(R, -R @ pos))
    return views


def _lamp_boundary_px(model: LampModel, pose: RigidTransform,
                      camera: CameraIntrinsics, view: RigidTransform,
                      n_circle: int = 90) -> Optional[np.ndarray]:
    boundary = model.face_boundary(n_circle)
    depths = view.apply(pose.apply(boundary))[:, 2]
    if np.any(depths <= 1e-6):
        return None
    return project_many(camera, view, pose, boundary)


def render_frame(scene: SceneSpec, view: RigidTransform,
                 models_by_id: dict, frame_index: int = 0) -> FrameRecord:
    """Rasterize one frame and record ground truth for fully visible lamps."""
    cam = scene.camera
    rng = np.random.default_rng([scene.seed, frame_index])
    img = np.full((cam.height, cam.width), scene.ambient, dtype=float)
    gt = []
    lamp_boxes = []
    for i, lamp in enumerate(scene.lamps):
        model = models_by_id[lamp.model_id]
        pose = lamp_world_pose(scene.building, model, lamp)
        uv = _lamp_boundary_px(model, pose, cam, view)
        if uv is None:
            continue
        if scene.jitter_sigma > 0:
            uv = uv + rng.normal(scale=scene.jitter_sigma, size=uv.shape)
        area = shoelace_area(uv)
        mask = polygon_mask(uv, cam.width, cam.height)
        if not np.any(mask):
            continue
        img[mask] = ON_INTENSITY if lamp.state == "on" else OFF_INTENSITY
        fully_inside = (uv[:, 0].min() >= 2 and uv[:, 1].min() >= 2
                        and uv[:, 0].max() <= cam.width - 3
                        and uv[:, 1].max() <= cam.height - 3)
        if fully_inside and area >= 50.0:
            gt.append(GroundTruthLamp(lamp_index=i, model_id=lamp.model_id,
                                      pose=pose, state=lamp.state,
                                      projected_area=area))
        lamp_boxes.append((uv[:, 0].min(), uv[:, 1].min(),
                           uv[:, 0].max(), uv[:, 1].max()))

    _add_distractors(img, scene, rng, lamp_boxes)

    if scene.noise_sigma > 0:
        img = img + rng.normal(scale=scene.noise_sigma, size=img.shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return FrameRecord(image=GrayImage.from_array(img), view=view, gt=tuple(gt))


def _add_distractors(img: np.ndarray, scene: SceneSpec, rng, lamp_boxes) -> None:
    """Exactly scene.distractors bright non-lamp blobs, kept clear of lamps."""
    h, w = img.shape
    placed = 0
    boxes = list(lamp_boxes)
    attempts = 0
    while placed < scene.distractors and attempts < 500:
        attempts += 1
        a = rng.uniform(6.0, 16.0)
        b = rng.uniform(6.0, 16.0)
        ang = rng.uniform(0.0, np.pi)
        r = max(a, b)
        cx = rng.uniform(r + 4, w - r - 5)
        cy = rng.uniform(r + 4, h - r - 5)
        box = (cx - r - 3, cy - r - 3, cx + r + 3, cy + r + 3)
        if any(not (box[2] < bx0 or box[0] > bx1 or box[3] < by0 or box[1] > by1)
               for bx0, by0, bx1, by1 in boxes):
            continue
        t = np.linspace(0.0, 2.0 * np.pi, 40, endpoint=False)
        ca, sa = np.cos(ang), np.sin(ang)
        bx = a * np.cos(t)
        by = b * np.sin(t)
        uv = np.column_stack([cx + bx * ca - by * sa, cy + bx * sa + by * ca])
        img[polygon_mask(uv, w, h)] = ON_INTENSITY
        boxes.append(box)
        placed += 1


# ---------------------------------------------------------------------------
# JSON schemas and dataset writing
# ---------------------------------------------------------------------------

def camera_to_json(cam: CameraIntrinsics) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "distortion": cam.distortion.tolist()}


def camera_from_json(doc: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=float(doc["fx"]), fy=float(doc["fy"]),
        cx=float(doc["cx"]), cy=float(doc["cy"]),
        width=int(doc["width"]), height=int(doc["height"]),
        distortion=np.asarray(doc.get("distortion", [0.0] * 5), dtype=float))


def scene_to_json(scene: SceneSpec) -> dict:
    return {
        "camera": camera_to_json(scene.camera),
        "building": building_to_json(scene.building),
        "lamps": [
            {"model": l.model_id, "position": l.position.tolist(), "wz": l.wz,
             "state": l.state, "tilt_deg": l.tilt_deg,
             "tilt_axis_deg": l.tilt_axis_deg}
            for l in scene.lamps
        ],
        "ambient": scene.ambient,
        "noise_sigma": scene.noise_sigma,
        "jitter_sigma": scene.jitter_sigma,
        "distractors": scene.distractors,
        "seed": scene.seed,
    }


def scene_from_json(doc: dict) -> SceneSpec:
    try:
        lamps = tuple(
            LampInstance(model_id=l["model"], position=l["position"],
                         wz=float(l.get("wz", 0.0)), state=l.get("state", "on"),
                         tilt_deg=float(l.get("tilt_deg", 0.0)),
                         tilt_axis_deg=float(l.get("tilt_axis_deg", 0.0)))
            for l in doc["lamps"])
        return SceneSpec(
            building=building_from_json(doc["building"]),
            camera=camera_from_json(doc["camera"]),
            lamps=lamps,
            ambient=int(doc.get("ambient", 20)),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            jitter_sigma=float(doc.get("jitter_sigma", 0.0)),
            distractors=int(doc.get("distractors", 0)),
            seed=int(doc.get("seed", 0)))
    except KeyError as exc:
        raise SchemaError(f"scene document missing field {exc}") from exc


def trajectory_to_json(t: TrajectorySpec) -> dict:
    return {"path": t.path.tolist(), "speed": t.speed, "frame_rate": t.frame_rate,
            "height": t.height, "pitch_up_deg": t.pitch_up_deg}


def trajectory_from_json(doc: dict) -> TrajectorySpec:
    try:
        return TrajectorySpec(path=np.asarray(doc["path"], dtype=float),
                              speed=float(doc.get("speed", 1.0)),
                              frame_rate=float(doc.get("frame_rate", 10.0)),
                              height=float(doc.get("height", 1.5)),
                              pitch_up_deg=float(doc.get("pitch_up_deg", 60.0)))
    except KeyError as exc:
        raise SchemaError(f"trajectory document missing field {exc}") from exc


def transform_to_json(T: RigidTransform) -> dict:
    return {"rotation": T.rotation.tolist(), "translation": T.translation.tolist()}


def transform_from_json(doc: dict) -> RigidTransform:
    return RigidTransform(np.asarray(doc["rotation"], dtype=float),
                          np.asarray(doc["translation"], dtype=float))


def references_from_scene(scene: SceneSpec, models_by_id: dict) -> list[dict]:
    """Reference entries (one per lamp) for evaluation against ground truth."""
    out = []
    for lamp in scene.lamps:
        model = models_by_id[lamp.model_id]
        pose = lamp_world_pose(scene.building, model, lamp)
        out.append({"position": pose.translation.tolist(),
                    "model": lamp.model_id, "state": lamp.state})
    return out


def write_dataset(out_dir, scene: SceneSpec, trajectory: TrajectorySpec,
                  models_by_id: dict) -> dict:
    """Render the whole trajectory to NNNNNN.pgm files plus poses.json.

    Returns the poses document (camera, per-frame view transforms and ground
    truth).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    views = generate_trajectory(trajectory)
    frames_doc = []
    for i, view in enumerate(views):
        rec = render_frame(scene, view, models_by_id, frame_index=i)
        name = f"{i:06d}.pgm"
        write_pgm(out_dir / name, rec.image.data)
        frames_doc.append({
            "file": name,
            "view": transform_to_json(view),
            "gt": [
                {"lamp": g.lamp_index, "model": g.model_id, "state": g.state,
                 "position": g.pose.translation.tolist(),
                 "rotation": g.pose.rotation.tolist(),
                 "projected_area": g.projected_area}
                for g in rec.gt
            ],
        })
    doc = {"camera": camera_to_json(scene.camera), "frames": frames_doc}
    (out_dir / "poses.json").write_text(json.dumps(doc, sort_keys=True))
    return doc
