"""Shared builders for synthetic end-to-end scenes."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from lampdet.bim import MountingKind, building_from_json
from lampdet.geom import CameraIntrinsics
from lampdet.pose import circle_lamp_model, model_to_json, rect_lamp_model
from lampdet.synth import (
    LampInstance,
    SceneSpec,
    TrajectorySpec,
    scene_to_json,
    trajectory_to_json,
)

# blob threshold sits below the off-lamp intensity (60) so both lamp states
# enter the pipeline; tighter chamfer settings keep the per-frame cost low
TEST_CONFIG_TOML = """\
[run]
workers = 1

[chamfer]
q = 12
lambda_px_per_rad = 60.0
grad_threshold = 80.0
score_threshold = 2.5

[shapes]
intensity_threshold = 45.0
min_area = 80
"""


def standard_camera(width=640, height=480, f=520.0):
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height)


def standard_models():
    return [rect_lamp_model("panel", 0.6, 0.4, MountingKind.embedded()),
            circle_lamp_model("disk", 0.17, MountingKind.embedded())]


def room_building(z=3.0, half=30.0):
    return building_from_json({
        "id": "hall",
        "ceilings": [{
            "vertices": [[-half, -half, z], [half, -half, z],
                         [half, half, z], [-half, half, z]],
            "normal": [0, 0, -1],
        }],
    })


def lamp_row(n=8, spacing=2.0, y_offsets=(-0.6, 0.6), start_x=2.0):
    """Alternating panel/disk lamps along a corridor in the x direction."""
    lamps = []
    for i in range(n):
        model = "panel" if i % 2 == 0 else "disk"
        y = y_offsets[i % len(y_offsets)]
        lamps.append(LampInstance(
            model_id=model,
            position=[start_x + i * spacing, y, 0.0],
            wz=0.35 * (i % 3),
            state="on" if i % 3 != 2 else "off"))
    return lamps


def corridor_scene(n_lamps=8, noise_sigma=0.0, jitter_sigma=0.0, distractors=0,
                   seed=0, tilt_deg=0.0, camera=None):
    lamps = lamp_row(n_lamps)
    if tilt_deg:
        lamps = [LampInstance(model_id=l.model_id, position=l.position, wz=l.wz,
                              state=l.state, tilt_deg=tilt_deg,
                              tilt_axis_deg=47.0 * i)
                 for i, l in enumerate(lamps)]
    return SceneSpec(
        building=room_building(),
        camera=camera or standard_camera(),
        lamps=tuple(lamps),
        ambient=20,
        noise_sigma=noise_sigma,
        jitter_sigma=jitter_sigma,
        distractors=distractors,
        seed=seed)


def corridor_trajectory(length=18.0, frame_rate=10.0):
    return TrajectorySpec(path=[[0.0, 0.0], [length, 0.0]], speed=1.0,
                          frame_rate=frame_rate, height=1.5, pitch_up_deg=60.0)


def write_scene_files(tmp_path: Path, scene: SceneSpec, trajectory: TrajectorySpec,
                      config_toml: str = TEST_CONFIG_TOML) -> dict:
    """scene.json / trajectory.json / models.json / config.toml in tmp_path."""
    tmp_path = Path(tmp_path)
    tmp_path.mkdir(parents=True, exist_ok=True)
    paths = {
        "scene": tmp_path / "scene.json",
        "trajectory": tmp_path / "trajectory.json",
        "models": tmp_path / "models.json",
        "config": tmp_path / "config.toml",
        "dataset": tmp_path / "dataset",
    }
    paths["scene"].write_text(json.dumps(scene_to_json(scene)))
    paths["trajectory"].write_text(json.dumps(trajectory_to_json(trajectory)))
    paths["models"].write_text(json.dumps(
        {"models": [model_to_json(m) for m in standard_models()]}))
    paths["config"].write_text(config_toml)
    return paths
