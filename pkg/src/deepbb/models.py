"""Differentiable steering models: RGB frame in [0,1] -> steering angle in degrees.

Positive angles steer left, negative steer right.

Two architectures:

``tiny_dave``
    3x32x64 -> conv 8@5x5/2 -> relu -> conv 12@5x5/2 -> relu -> flatten
    -> dense 64 -> relu -> dense 1 -> atan_scaled -> degrees in (-90, 90).
``linear_probe``
    angle = <w, frame> + b. Unbounded; used where an exactly linear
    objective is needed (brute-force oracles).

Weight file layout (``.dbw``)::

    b"DEEPBBW1\\n"
    one line of UTF-8 JSON: {"format": "deepbb-weights/1",
                             "architecture": ..., "input_shape": [C, H, W],
                             "params": [{"name": ..., "shape": [...]}, ...]}
    b"\\n"
    the parameters, in header order, as little-endian float64, row-major.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import FormatError, ShapeError, ValidationError

ARCHITECTURES = ("tiny_dave", "linear_probe")
WEIGHTS_MAGIC = b"DEEPBBW1\n"
WEIGHTS_FORMAT = "deepbb-weights/1"

# atan_scaled spans (-pi, pi); the head maps that onto (-90, 90) degrees.
HEAD_TO_DEGREES = 90.0 / math.pi

_TINY_DAVE_LAYOUT = (
    ("conv1.w", lambda c, h, w: (8, c, 5, 5)),
    ("conv1.b", lambda c, h, w: (8,)),
    ("conv2.w", lambda c, h, w: (12, 8, 5, 5)),
    ("conv2.b", lambda c, h, w: (12,)),
    ("fc1.w", lambda c, h, w: (64, 12 * _conv_out(_conv_out(h)) * _conv_out(_conv_out(w)))),
    ("fc1.b", lambda c, h, w: (64,)),
    ("fc2.w", lambda c, h, w: (1, 64)),
    ("fc2.b", lambda c, h, w: (1,)),
)


def _conv_out(n: int, k: int = 5, stride: int = 2) -> int:
    return (n - k) // stride + 1


@dataclass
class SteeringModel:
    architecture: str
    input_shape: tuple[int, int, int]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValidationError(f"unknown architecture {self.architecture!r}")
        self.input_shape = tuple(int(d) for d in self.input_shape)
        expected = _param_shapes(self.architecture, self.input_shape)
        if set(self.params) != set(expected):
            raise ValidationError(f"{self.architecture} needs params {sorted(expected)}, got {sorted(self.params)}")
        for name, shape in expected.items():
            arr = np.ascontiguousarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"param {name}: expected {shape}, got {arr.shape}")
            self.params[name] = arr

    @classmethod
    def tiny_dave(cls, seed: int = 0, input_shape=(3, 32, 64)) -> "SteeringModel":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in _param_shapes("tiny_dave", input_shape).items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                params[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        params["fc2.w"] *= 0.1
        return cls("tiny_dave", input_shape, params)

    @classmethod
    def linear_probe(cls, weights, bias: float = 0.0) -> "SteeringModel":
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 3:
            raise ShapeError(f"linear_probe weights must be [C,H,W], got {w.shape}")
        return cls("linear_probe", w.shape, {"w": w.copy(), "b": np.array([float(bias)])})

    def copy(self) -> "SteeringModel":
        return SteeringModel(self.architecture, self.input_shape, {k: v.copy() for k, v in self.params.items()})

    def forward(self, frame, graph: T.Graph, input_grad: bool = False, param_grad: bool = False):
        """Record one forward pass on ``graph``; returns (input leaf, param leaves, output)."""
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != self.input_shape:
            raise ShapeError(f"frame shape {frame.shape} != model input shape {self.input_shape}")
        x = graph.leaf(frame, requires_grad=input_grad)
        p = {k: graph.leaf(v, requires_grad=param_grad) for k, v in self.params.items()}
        if self.architecture == "linear_probe":
            w = T.reshape(p["w"], (1, -1))
            out = T.dense(T.reshape(x, (-1,)), w, p["b"])
        else:
            h = T.relu(T.conv2d(x, p["conv1.w"], 2, p["conv1.b"]))
            h = T.relu(T.conv2d(h, p["conv2.w"], 2, p["conv2.b"]))
            h = T.reshape(h, (-1,))
            h = T.relu(T.dense(h, p["fc1.w"], p["fc1.b"]))
            h = T.dense(h, p["fc2.w"], p["fc2.b"])
            out = T.scale(T.activation(h, "atan_scaled"), HEAD_TO_DEGREES)
        return x, p, out


def _param_shapes(architecture: str, input_shape) -> dict[str, tuple[int, ...]]:
    c, h, w = input_shape
    if architecture == "linear_probe":
        return {"w": (c, h, w), "b": (1,)}
    if _conv_out(_conv_out(h)) < 1 or _conv_out(_conv_out(w)) < 1:
        raise ShapeError(f"input {input_shape} too small for tiny_dave")
    return {name: fn(c, h, w) for name, fn in _TINY_DAVE_LAYOUT}


def predict(model: SteeringModel, frame) -> float:
    """Steering angle in degrees."""
    _, _, out = model.forward(frame, T.Graph())
    return float(out.data[0])


def predict_and_gradient(model: SteeringModel, frame, sign: int = 1) -> tuple[float, np.ndarray]:
    """Angle plus ``sign * d(angle)/d(frame)`` from a single forward/backward pass."""
    if sign not in (1, -1):
        raise ValidationError(f"sign must be +1 or -1, got {sign!r}")
    g = T.Graph()
    x, _, out = model.forward(frame, g, input_grad=True)
    g.backward(np.array([float(sign)]), out)
    return float(out.data[0]), x.grad


def input_gradient(model: SteeringModel, frame, sign: int = 1) -> np.ndarray:
    return predict_and_gradient(model, frame, sign)[1]


@dataclass
class TrainReport:
    epochs: int
    steps: int
    final_mse: float
    seed: int


def train_toy(model: SteeringModel, dataset, *, epochs: int = 10, lr: float = 1e-4, seed: int = 0,
              holdout=None, max_steps: int | None = None) -> TrainReport:
    """Per-sample SGD on squared angle error; updates ``model`` in place.

    ``final_mse`` is measured on ``holdout`` when given, else on ``dataset``.
    """
    if not dataset:
        raise ValidationError("training dataset is empty")
    for frame, _ in dataset:
        if np.shape(frame) != model.input_shape:
            raise ShapeError(f"dataset frame shape {np.shape(frame)} != model input {model.input_shape}")
    rng = np.random.default_rng(seed)
    steps = 0
    done = False
    for _ in range(epochs):
        for idx in rng.permutation(len(dataset)):
            frame, angle = dataset[idx]
            g = T.Graph()
            _, p, out = model.forward(frame, g, param_grad=True)
            err = out.data[0] - float(angle)
            g.backward(np.array([2.0 * err]), out)
            if lr != 0.0:
                for name, leaf in p.items():
                    model.params[name] = model.params[name] - lr * leaf.grad
            steps += 1
            if max_steps is not None and steps >= max_steps:
                done = True
                break
        if done:
            break
    eval_set = holdout if holdout is not None else dataset
    mse = float(np.mean([(predict(model, f) - a) ** 2 for f, a in eval_set]))
    return TrainReport(epochs=epochs, steps=steps, final_mse=mse, seed=seed)


def save_weights(model: SteeringModel, path) -> None:
    names = list(model.params)
    header = {
        "format": WEIGHTS_FORMAT,
        "architecture": model.architecture,
        "input_shape": list(model.input_shape),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            fh.write(model.params[n].astype("<f8").tobytes(order="C"))


def load_weights(path) -> SteeringModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(WEIGHTS_MAGIC):
        raise FormatError(f"{path}: not a deepbb weight file")
    end = raw.find(b"\n", len(WEIGHTS_MAGIC))
    if end < 0:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(WEIGHTS_MAGIC):end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header: {exc}") from None
    if header.get("format") != WEIGHTS_FORMAT:
        raise FormatError(f"{path}: unsupported format {header.get('format')!r}")
    offset = end + 1
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 8
        chunk = raw[offset:offset + n]
        if len(chunk) != n:
            raise FormatError(f"{path}: truncated data for {entry['name']}")
        params[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += n
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    try:
        return SteeringModel(header["architecture"], tuple(header["input_shape"]), params)
    except (ValidationError, ShapeError) as exc:
        raise FormatError(f"{path}: {exc}") from None
