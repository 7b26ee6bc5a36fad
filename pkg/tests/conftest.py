from __future__ import annotations

import itertools

import numpy as np
import pytest

from deepbb.geometry import Quad
from deepbb.models import SteeringModel, load_weights
from deepbb.resources import bundled_model_path, bundled_scene_path
from deepbb.scene_io import ColorAdjustment, FrameRecord, Scene, load_scene


@pytest.fixture(scope="session")
def trained_model():
    return load_weights(bundled_model_path())


@pytest.fixture(scope="session")
def bundled_scene(trained_model):
    return load_scene(bundled_scene_path(), trained_model)


def make_linear_scene(seed: int, n_frames: int = 3, hw=(8, 10), adj=(0.0, 0.0, 0.0)):
    """Random frames with random in-frame quads and a random linear_probe."""
    rng = np.random.default_rng(seed)
    hf, wf = hw
    model = SteeringModel.linear_probe(rng.normal(size=(3, hf, wf)), float(rng.normal()))
    frames = []
    for i in range(n_frames):
        x0, y0 = rng.uniform(0.6, 2.0, 2)
        pts = [[x0, y0], [wf - rng.uniform(0, 2), y0 + rng.uniform(-0.5, 0.5)],
               [wf - rng.uniform(0, 2), hf - rng.uniform(0, 2)], [x0 + rng.uniform(-0.5, 0.5), hf - rng.uniform(0, 2)]]
        frames.append(FrameRecord(rng.random((3, hf, wf)), Quad(pts), ColorAdjustment.of(adj), False, None, f"f{i}"))
    return Scene(f"linear{seed}", frames, (1.0, 1.0, 0.0)).with_baselines(model), model


def brute_force_optimum(scene, model, gamut, dims):
    """Best whole-scene objective over every printable texture, by enumeration.

    Only valid for linear_probe models: the score of a frame is ``w . x + b``.
    """
    w, b = model.params["w"], float(model.params["b"][0])
    maps = scene.sampling_maps(dims)
    base = scene.baselines().sum()
    best, arg = -np.inf, None
    n = dims[0] * dims[1]
    for combo in itertools.product(range(len(gamut)), repeat=n):
        tex = gamut.colors[list(combo)].T.reshape(3, *dims)
        total = sum(float(np.sum(w * m.warp(tex, f.image, f.adj.as_array()))) + b
                    for m, f in zip(maps, scene.frames)) - base
        if total > best:
            best, arg = total, tex
    return best, arg


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Log one pass/fail line for an acceptance criterion, then assert it."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
