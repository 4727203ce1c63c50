"""Synthetic scene generator tests."""

from __future__ import annotations

import numpy as np
import pytest

from lampdet.bim import MountingKind, building_from_json
from lampdet.errors import InvalidPath
from lampdet.geom import CameraIntrinsics, project_many, z_axis_angle
from lampdet.pose import circle_lamp_model, rect_lamp_model
from lampdet.shapes import extract_blobs
from lampdet.synth import (
    FrameRecord,
    LampInstance,
    SceneSpec,
    TrajectorySpec,
    camera_from_json,
    camera_to_json,
    generate_trajectory,
    lamp_world_pose,
    render_frame,
    scene_from_json,
    scene_to_json,
    trajectory_from_json,
    trajectory_to_json,
)

CAMERA = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)
RECT = rect_lamp_model("rect", 0.6, 0.4, MountingKind.embedded())
DISK = circle_lamp_model("disk", 0.17, MountingKind.embedded())
MODELS = {m.id: m for m in (RECT, DISK)}


def room(z=3.0, size=20.0):
    return building_from_json({
        "id": "room",
        "ceilings": [{
            "vertices": [[-size, -size, z], [size, -size, z],
                         [size, size, z], [-size, size, z]],
            "normal": [0, 0, -1],
        }],
    })


def simple_scene(lamps, **kw):
    return SceneSpec(building=room(), camera=CAMERA, lamps=tuple(lamps), **kw)


class TestTrajectory:
    def test_straight_path_count_and_spacing(self):
        spec = TrajectorySpec(path=[[0, 0], [10, 0]], speed=1.0, frame_rate=10.0)
        views = generate_trajectory(spec)
        assert len(views) == 101
        positions = np.array([v.inverse().translation for v in views])
        gaps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
        assert np.allclose(gaps, 0.1, atol=1e-9)

    def test_camera_height(self):
        spec = TrajectorySpec(path=[[0, 0], [5, 3]], speed=1.0, frame_rate=5.0)
        for v in generate_trajectory(spec):
            assert v.inverse().translation[2] == pytest.approx(1.5)

    def test_pitch_angle(self):
        spec = TrajectorySpec(path=[[0, 0], [4, 0]], pitch_up_deg=60.0)
        for v in generate_trajectory(spec):
            # optical axis (third row of the view rotation) climbs at 60 degrees
            forward = v.rotation[2]
            assert forward[2] == pytest.approx(np.sin(np.deg2rad(60.0)))

    def test_single_point_path_rejected(self):
        with pytest.raises(InvalidPath):
            generate_trajectory(TrajectorySpec(path=[[0, 0]]))

    def test_rotations_orthonormal(self):
        spec = TrajectorySpec(path=[[0, 0], [2, 1], [4, -1]], frame_rate=3.0)
        for v in generate_trajectory(spec):
            assert np.allclose(v.rotation @ v.rotation.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(v.rotation) == pytest.approx(1.0)


class TestLampPose:
    def test_embedded_snaps_to_ceiling(self):
        lamp = LampInstance(model_id="rect", position=[1.0, 2.0, 0.0])
        pose = lamp_world_pose(room(), RECT, lamp)
        assert pose.translation[2] == pytest.approx(3.0)
        assert z_axis_angle(pose, [0, 0, -1]) < 1e-12

    def test_hanging_below_ceiling(self):
        hang = circle_lamp_model("hang", 0.15, MountingKind.hanging(0.5))
        lamp = LampInstance(model_id="hang", position=[0.0, 0.0, 0.0])
        pose = lamp_world_pose(room(), hang, lamp)
        assert pose.translation[2] == pytest.approx(2.5)
        assert z_axis_angle(pose, [0, 0, 1]) < 1e-12

    def test_tilt_perturbation(self):
        lamp = LampInstance(model_id="rect", position=[0, 0, 0], tilt_deg=2.0)
        pose = lamp_world_pose(room(), RECT, lamp)
        assert z_axis_angle(pose, [0, 0, -1]) == pytest.approx(np.deg2rad(2.0), abs=1e-9)


def view_under(x=0.0, y=0.0):
    """A view looking straight up from directly below (x, y)."""
    spec = TrajectorySpec(path=[[x, y], [x + 1.0, y]], pitch_up_deg=89.9,
                          speed=1.0, frame_rate=1.0)
    return generate_trajectory(spec)[0]


class TestRenderFrame:
    def test_zero_noise_blob_matches_projection(self):
        scene = simple_scene([LampInstance(model_id="rect", position=[0.5, 0, 0])])
        view = view_under(0.5, 0.0)
        rec = render_frame(scene, view, MODELS)
        assert len(rec.gt) == 1
        blobs = extract_blobs(rec.image, 220, 100)
        assert len(blobs) == 1
        uv = project_many(CAMERA, view, rec.gt[0].pose, RECT.face_boundary())
        blob_centroid = blobs[0].pixels.mean(axis=0)
        assert np.abs(blob_centroid - uv.mean(axis=0)).max() < 1.0

    def test_lamp_behind_camera_not_recorded(self):
        scene = simple_scene([LampInstance(model_id="rect", position=[-8.0, 0, 0])])
        view = view_under(0.0, 0.0)
        rec = render_frame(scene, view, MODELS)
        assert rec.gt == ()
        assert rec.image.data.max() <= scene.ambient

    def test_distractor_count(self):
        scene = simple_scene([LampInstance(model_id="rect", position=[0.3, 0, 0])],
                             distractors=3)
        view = view_under(0.3, 0.0)
        rec = render_frame(scene, view, MODELS)
        blobs = extract_blobs(rec.image, 220, 30)
        assert len(blobs) == 1 + 3

    def test_off_lamp_below_blob_threshold(self):
        scene = simple_scene([LampInstance(model_id="rect", position=[0.3, 0, 0],
                                           state="off")])
        view = view_under(0.3, 0.0)
        rec = render_frame(scene, view, MODELS)
        assert extract_blobs(rec.image, 220, 50) == []
        assert rec.image.data.max() == 60  # still visible to the edge detector

    def test_deterministic_rendering(self):
        scene = simple_scene([LampInstance(model_id="disk", position=[0.2, 0.1, 0])],
                             noise_sigma=2.0, jitter_sigma=1.0, distractors=2, seed=7)
        view = view_under(0.2, 0.1)
        a = render_frame(scene, view, MODELS, frame_index=4)
        b = render_frame(scene, view, MODELS, frame_index=4)
        assert np.array_equal(a.image.data, b.image.data)
        c = render_frame(scene, view, MODELS, frame_index=5)
        assert not np.array_equal(a.image.data, c.image.data)

    def test_ground_truth_on_mounting_plane(self):
        scene = simple_scene([LampInstance(model_id="rect", position=[0.4, -0.2, 0],
                                           wz=0.8)])
        rec = render_frame(scene, view_under(0.4, -0.2), MODELS)
        assert len(rec.gt) == 1
        assert z_axis_angle(rec.gt[0].pose, [0, 0, -1]) < 1e-12


class TestJsonRoundTrips:
    def test_scene(self):
        scene = simple_scene(
            [LampInstance(model_id="rect", position=[1, 2, 0], wz=0.3, state="off",
                          tilt_deg=1.5, tilt_axis_deg=45.0)],
            noise_sigma=1.5, jitter_sigma=0.5, distractors=4, seed=11)
        doc = scene_to_json(scene)
        back = scene_from_json(doc)
        assert back.lamps[0].model_id == "rect"
        assert back.lamps[0].state == "off"
        assert back.lamps[0].tilt_deg == 1.5
        assert back.noise_sigma == 1.5
        assert back.seed == 11
        assert np.allclose(back.building.ceilings[0].polygon,
                           scene.building.ceilings[0].polygon)

    def test_trajectory(self):
        t = TrajectorySpec(path=[[0, 0], [3, 1]], speed=0.8, frame_rate=12.0,
                           height=1.4, pitch_up_deg=55.0)
        back = trajectory_from_json(trajectory_to_json(t))
        assert np.allclose(back.path, t.path)
        assert back.pitch_up_deg == 55.0

    def test_camera(self):
        back = camera_from_json(camera_to_json(CAMERA))
        assert (back.fx, back.fy, back.cx, back.cy) == (600.0, 600.0, 320.0, 240.0)
        assert (back.width, back.height) == (640, 480)
        assert np.array_equal(back.distortion, CAMERA.distortion)
