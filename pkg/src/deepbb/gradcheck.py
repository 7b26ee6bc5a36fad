"""Central finite-difference checks of backward-pass gradients.

Relative error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
The floor keeps gradients at roundoff level (below ``floor``) from being
compared relatively. Coordinates whose +/-h probes change any relu on/off
pattern are skipped, since the derivative is undefined across a kink.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .models import SteeringModel

H_STEP = 1e-5
REL_FLOOR = 1e-6


@dataclass
class GradcheckResult:
    max_rel_error: float
    checked: int
    skipped_kinks: int


def rel_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _forward(model: SteeringModel, frame, params=None):
    """Output and relu on/off pattern of one forward pass."""
    g = T.Graph()
    if params is not None:
        model = SteeringModel(model.architecture, model.input_shape, params)
    _, _, out = model.forward(frame, g, input_grad=True)
    pattern = [node.inputs[0].data > 0 for node in g.nodes if node.op == "relu"]
    return float(out.data[0]), pattern


def _same(p, q) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(p, q))


def check_model(model: SteeringModel, frame, rng: np.random.Generator, n_input: int = 16, n_param: int = 16,
                h: float = H_STEP) -> GradcheckResult:
    """Compare input and parameter gradients with central differences at sampled coordinates."""
    frame = np.asarray(frame, dtype=np.float64)
    g = T.Graph()
    x, leaves, out = model.forward(frame, g, input_grad=True, param_grad=True)
    g.backward(np.ones(1), out)
    _, base = _forward(model, frame)

    worst, checked, skipped = 0.0, 0, 0
    for flat in rng.choice(frame.size, size=min(n_input, frame.size), replace=False):
        xp, xm = frame.copy(), frame.copy()
        xp.flat[flat] += h
        xm.flat[flat] -= h
        fp, pp = _forward(model, xp)
        fm, pm = _forward(model, xm)
        if not (_same(pp, base) and _same(pm, base)):
            skipped += 1
            continue
        worst = max(worst, rel_error(x.grad.flat[flat], (fp - fm) / (2 * h)))
        checked += 1

    names = sorted(model.params)
    for _ in range(n_param):
        name = names[rng.integers(len(names))]
        arr = model.params[name]
        flat = int(rng.integers(arr.size))
        plus = dict(model.params)
        minus = dict(model.params)
        plus[name] = arr.copy()
        minus[name] = arr.copy()
        plus[name].flat[flat] += h
        minus[name].flat[flat] -= h
        fp, pp = _forward(model, frame, plus)
        fm, pm = _forward(model, frame, minus)
        if not (_same(pp, base) and _same(pm, base)):
            skipped += 1
            continue
        worst = max(worst, rel_error(leaves[name].grad.flat[flat], (fp - fm) / (2 * h)))
        checked += 1
    return GradcheckResult(worst, checked, skipped)


def check_many(model_factory, n_seeds: int = 100, n_input: int = 16, n_param: int = 16,
               frame_shape=None, base_seed: int = 0) -> GradcheckResult:
    """Run ``check_model`` over seeds; ``model_factory(seed)`` builds each model."""
    worst, checked, skipped = 0.0, 0, 0
    for seed in range(n_seeds):
        model = model_factory(seed)
        rng = np.random.default_rng((base_seed, seed))
        frame = rng.random(frame_shape or model.input_shape)
        r = check_model(model, frame, rng, n_input, n_param)
        worst = max(worst, r.max_rel_error)
        checked += r.checked
        skipped += r.skipped_kinks
    return GradcheckResult(worst, checked, skipped)
