from __future__ import annotations

import numpy as np
import pytest

from deepbb.errors import FormatError, ShapeError, ValidationError
from deepbb.gradcheck import check_many
from deepbb.models import (SteeringModel, input_gradient, load_weights, predict, predict_and_gradient,
                           save_weights, train_toy)
from deepbb.synthscene import make_steering_dataset, render_frame
from deepbb.scene_io import quantize


def test_zero_linear_probe_predicts_zero():
    model = SteeringModel.linear_probe(np.zeros((3, 4, 5)))
    frame = np.random.default_rng(0).random((3, 4, 5))
    assert predict(model, frame) == 0.0


def test_trained_model_on_straight_road(trained_model):
    frame = quantize(render_frame((32, 64)))
    assert abs(predict(trained_model, frame)) <= 2.0


def test_predict_depends_only_on_pixels(trained_model):
    frame = np.random.default_rng(1).random((3, 32, 64))
    assert predict(trained_model, frame) == predict(trained_model, frame.copy())


def test_predict_rejects_wrong_shape(trained_model):
    with pytest.raises(ShapeError):
        predict(trained_model, np.zeros((3, 32, 63)))


def test_output_bounded_by_head():
    model = SteeringModel.tiny_dave(0)
    model.params["fc2.b"] = np.array([1e6])
    assert 89.0 < predict(model, np.zeros((3, 32, 64))) < 90.0
    model.params["fc2.b"] = np.array([-1e6])
    assert -90.0 < predict(model, np.zeros((3, 32, 64))) < -89.0


def test_linear_probe_gradient_is_weight_map():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(3, 4, 5))
    model = SteeringModel.linear_probe(w, 0.3)
    for frame in (rng.random((3, 4, 5)), np.zeros((3, 4, 5))):
        assert np.array_equal(input_gradient(model, frame, 1), w)
        assert np.array_equal(input_gradient(model, frame, -1), -w)


def test_sign_flip_negates_gradient(trained_model):
    frame = np.random.default_rng(3).random((3, 32, 64))
    assert np.array_equal(input_gradient(trained_model, frame, -1), -input_gradient(trained_model, frame, 1))
    with pytest.raises(ValidationError):
        input_gradient(trained_model, frame, 2)


def test_tiny_dave_gradients_match_finite_differences():
    result = check_many(SteeringModel.tiny_dave, n_seeds=5)
    assert result.checked > 100
    assert result.max_rel_error < 1e-4


def test_first_order_taylor(trained_model):
    frame = np.random.default_rng(4).random((3, 32, 64))
    value, g = predict_and_gradient(trained_model, frame)
    norm = np.linalg.norm(g)
    eps = 1e-3
    moved = predict(trained_model, frame + eps * g / norm)
    assert abs((moved - value) - eps * norm) < 0.05 * eps * norm


def test_train_constant_target_converges():
    frame = np.random.default_rng(5).random((3, 32, 64))
    model = SteeringModel.tiny_dave(0)
    report = train_toy(model, [(frame, 5.0)] * 10, epochs=50, lr=1e-4, max_steps=500)
    assert report.steps <= 500
    assert report.final_mse < 0.01
    assert abs(predict(model, frame) - 5.0) < 0.1


def test_train_zero_lr_leaves_params():
    data = make_steering_dataset(3, seed=0)
    model = SteeringModel.tiny_dave(1)
    before = {k: v.copy() for k, v in model.params.items()}
    train_toy(model, data, epochs=1, lr=0.0)
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def test_train_is_deterministic():
    data = make_steering_dataset(4, seed=0)
    reports, params = [], []
    for _ in range(2):
        model = SteeringModel.tiny_dave(2)
        reports.append(train_toy(model, data, epochs=2, lr=1e-4, seed=3))
        params.append(model.params)
    assert reports[0] == reports[1]
    assert all(np.array_equal(params[0][k], params[1][k]) for k in params[0])


def test_train_rejects_empty_and_misshaped():
    with pytest.raises(ValidationError):
        train_toy(SteeringModel.tiny_dave(0), [])
    with pytest.raises(ShapeError):
        train_toy(SteeringModel.tiny_dave(0), [(np.zeros((3, 8, 8)), 0.0)])


def test_weights_round_trip(tmp_path, trained_model):
    path = tmp_path / "m.dbw"
    save_weights(trained_model, path)
    loaded = load_weights(path)
    assert loaded.architecture == "tiny_dave"
    assert loaded.input_shape == trained_model.input_shape
    assert all(np.array_equal(loaded.params[k], trained_model.params[k]) for k in trained_model.params)
    probe = SteeringModel.linear_probe(np.arange(24.0).reshape(2, 3, 4), -1.5)
    save_weights(probe, tmp_path / "p.dbw")
    again = load_weights(tmp_path / "p.dbw")
    assert np.array_equal(again.params["w"], probe.params["w"]) and again.params["b"][0] == -1.5


def test_weights_corrupt_files(tmp_path, trained_model):
    path = tmp_path / "m.dbw"
    save_weights(trained_model, path)
    raw = path.read_bytes()
    (tmp_path / "magic.dbw").write_bytes(b"NOTAFILE" + raw[8:])
    (tmp_path / "short.dbw").write_bytes(raw[:-8])
    (tmp_path / "long.dbw").write_bytes(raw + b"\0" * 8)
    for name in ("magic", "short", "long"):
        with pytest.raises(FormatError):
            load_weights(tmp_path / f"{name}.dbw")


def test_model_validation():
    with pytest.raises(ValidationError):
        SteeringModel("resnet", (3, 32, 64), {})
    with pytest.raises(ValidationError):
        SteeringModel("linear_probe", (3, 2, 2), {"w": np.zeros((3, 2, 2))})
    with pytest.raises(ShapeError):
        SteeringModel("linear_probe", (3, 2, 2), {"w": np.zeros((3, 2, 3)), "b": np.zeros(1)})
    with pytest.raises(ShapeError):
        SteeringModel.tiny_dave(0, input_shape=(3, 8, 8))
