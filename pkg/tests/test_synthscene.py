from __future__ import annotations

import numpy as np
import pytest

from deepbb.errors import RenderError, ValidationError
from deepbb.scene_io import estimate_adj
from deepbb.synthscene import (Billboard, Camera, DrivePath, Pose, calibration_texture, curvature_to_angle,
                               make_steering_dataset, render_frame, render_scene, unicolor_texture)

BUNDLED_PATH = DrivePath.straight(20, 9.2, interval=1 / 30)


def test_drive_path_invariants():
    with pytest.raises(ValidationError):
        DrivePath([])
    with pytest.raises(ValidationError):
        DrivePath([Pose(5.0), Pose(6.0)])
    with pytest.raises(ValidationError):
        DrivePath([Pose(5.0), Pose(4.0)], [0.1])
    path = DrivePath.from_dict({"poses": [{"distance": 9.0}, {"distance": 8.0, "lateral_offset": 0.2}]})
    assert path.lighting == [0.0, 0.0]


def test_centered_billboard_stays_centered():
    board = Billboard(width=4.0, height=3.0, left=-2.0, bottom=0.5)
    scene = render_scene(DrivePath.straight(6, 9.0, interval=0.05), unicolor_texture((1, 1, 0)),
                         billboard=board, min_area=100)
    areas = [f.quad.area() for f in scene.frames]
    assert all(b > a for a, b in zip(areas, areas[1:]))
    for f in scene.frames:
        assert f.quad.points[:, 0].mean() == pytest.approx(32.0, abs=1e-9)


def test_quads_match_projection():
    cam, board = Camera(), Billboard()
    scene = render_scene(BUNDLED_PATH, unicolor_texture((1, 1, 0)))
    for f, pose in zip(scene.frames, BUNDLED_PATH.poses):
        expected = cam.project(board.corners(pose.distance), (32, 64), pose.lateral_offset)
        assert np.max(np.abs(f.quad.points - expected)) < 0.5


def test_bundled_setup_meets_selection_criterion():
    scene = render_scene(BUNDLED_PATH, unicolor_texture((1, 1, 0)))
    assert scene.frames[0].quad.area() > 400 and not scene.frames[0].clipped
    assert scene.frames[-1].clipped
    areas = [f.quad.area() for f in scene.frames]
    assert all(b > a for a, b in zip(areas, areas[1:]))


def test_render_rejects_small_or_invisible_billboard():
    with pytest.raises(RenderError, match="400"):
        render_scene(DrivePath.straight(2, 13.0), unicolor_texture((1, 1, 0)))
    with pytest.raises(RenderError):
        render_scene(DrivePath.straight(2, 3.0), unicolor_texture((1, 1, 0)))


def test_render_is_deterministic():
    a = render_scene(DrivePath.straight(3, 9.2, interval=1 / 30), unicolor_texture((1, 1, 0)), seed=4, noise=0.02)
    b = render_scene(DrivePath.straight(3, 9.2, interval=1 / 30), unicolor_texture((1, 1, 0)), seed=4, noise=0.02)
    assert all(np.array_equal(x.image, y.image) for x, y in zip(a.frames, b.frames))


def test_lighting_offset_recovered_by_calibration():
    prefill = (0.5, 0.5, 0.5)
    path = DrivePath.straight(4, 9.2, interval=1 / 30, lighting=0.1)
    scene = render_scene(path, calibration_texture(prefill), prefill_color=prefill)
    for f in scene.frames:
        assert f.adj.as_array() == pytest.approx([0.1, 0.1, 0.1])
        est = estimate_adj(f.image, f.quad, prefill)
        assert np.max(np.abs(est.as_array() - 0.1)) <= 1 / 255


def test_calibration_texture_marks_corners():
    tex = calibration_texture((1, 1, 0), (16, 24))
    assert np.array_equal(tex[:, 0, 0], [0, 0, 1]) and np.array_equal(tex[:, 8, 12], [1, 1, 0])


def test_steering_dataset_labels():
    data = make_steering_dataset(40, seed=3)
    assert len(data) == 40 and data[0][0].shape == (3, 32, 64)
    straight = make_steering_dataset(5, seed=1, straight_fraction=1.0)
    assert all(label == 0.0 for _, label in straight)
    assert curvature_to_angle(-0.01) == -curvature_to_angle(0.01)
    again = make_steering_dataset(40, seed=3)
    assert all(np.array_equal(a[0], b[0]) and a[1] == b[1] for a, b in zip(data, again))
    with pytest.raises(ValidationError):
        make_steering_dataset(0)


def test_mirrored_curve_mirrors_frame():
    left = render_frame((32, 64), curvature=0.01)
    right = render_frame((32, 64), curvature=-0.01)
    assert np.allclose(left, right[:, :, ::-1])


def test_trained_model_fits_held_out_renders(trained_model):
    from deepbb.models import predict

    data = make_steering_dataset(60, seed=99)
    mse = np.mean([(predict(trained_model, f) - a) ** 2 for f, a in data])
    assert mse < 4.0
