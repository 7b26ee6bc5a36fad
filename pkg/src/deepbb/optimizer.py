"""Joint billboard optimization over every frame of a drive-by scene.

One texture is shared by all frames. Each iteration shuffles the frames and
walks them in batches; per batch:

1. take the steering gradient of every frame in the batch with respect to
   its pixels, signed by the attack direction;
2. drop pixels outside the billboard and pixels whose observed color
   (texture plus lighting adjustment) lies strictly outside [0, 1], where
   the clamp hides any small change;
3. pull the gradient back onto texels through the bilinear adjoint;
4. keep the ``top_k`` texels with the largest channel-summed magnitude;
5. merge the per-frame proposals (``max``, ``sum`` or ``greedy_best``);
6. step the unprojected texture, clamp it to ``[-latent_margin,
   1 + latent_margin]``, and snap every texel to the nearest printable color;
7. patch the snapped attempt into the frames and score it;
8. accept on improvement, or by simulated annealing.

Accepted steps update the unprojected texture as well as its printable
snap (``keep_latent``), so steps smaller than the spacing between printable
colors still accumulate. A rejected step whose snap equals the current
texture still moves the unprojected texture, since nothing printable
changed; only the snapped texture is ever shown to the model
or returned.

The score is the summed signed steering divergence from each frame's
unperturbed prediction, so ``score / n_frames`` is the mean angle error for
``direction="left"`` and its negation for ``"right"``. The best texture seen
is returned, which SA can only make better than the last accepted one.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .errors import ShapeError, SpatialConstraintError, ValidationError
from .gamut import Gamut, project_to_gamut, nps_texture
from .models import SteeringModel, predict, predict_and_gradient
from .scene_io import Perturbation, Scene

OVERLAP_MODES = ("max", "sum", "greedy_best")
STEP_RULES = ("sign", "raw")
SCOPES = ("scene", "batch")
_DIRECTION_SIGN = {"left": 1, "right": -1}


@dataclass
class SAConfig:
    enabled: bool = True
    T0: float = 1.0
    cooling: float = 0.95

    def temperature(self, iteration: int) -> float:
        return self.T0 * self.cooling ** iteration


@dataclass
class AttackConfig:
    iterations: int = 100
    batch_size: int = 5
    step_size: float = 0.05
    top_k: int | None = None  # None: every texel
    overlap_mode: str = "max"
    direction: str = "left"
    sa: SAConfig = field(default_factory=SAConfig)
    seed: int = 0
    init_color: tuple[float, float, float] = (1.0, 1.0, 0.0)
    billboard_dims: tuple[int, int] = (16, 24)
    step_rule: str = "sign"
    objective_scope: str = "scene"
    keep_latent: bool = True
    latent_margin: float = 0.0  # latent may range over [-margin, 1 + margin]
    tau: float = field(default_factory=lambda: metrics.tau_for(40 * metrics.MPH_TO_MPS, 0.2, 1.0))
    audit_every: int = 1
    workers: int | None = None

    def validate(self, n_frames: int | None = None) -> None:
        def bad(msg):
            raise ValidationError(f"invalid attack config: {msg}")

        if self.iterations < 1:
            bad(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            bad(f"batch_size must be >= 1, got {self.batch_size}")
        if n_frames is not None and self.batch_size > n_frames:
            bad(f"batch_size {self.batch_size} exceeds scene size {n_frames}")
        if not self.step_size >= 0 or not math.isfinite(self.step_size):
            bad(f"step_size must be finite and >= 0, got {self.step_size}")
        if self.top_k is not None and self.top_k < 1:
            bad(f"top_k must be >= 1 (or null for all), got {self.top_k}")
        if self.overlap_mode not in OVERLAP_MODES:
            bad(f"overlap_mode must be one of {OVERLAP_MODES}, got {self.overlap_mode!r}")
        if self.direction not in _DIRECTION_SIGN:
            bad(f"direction must be left or right, got {self.direction!r}")
        if self.step_rule not in STEP_RULES:
            bad(f"step_rule must be one of {STEP_RULES}, got {self.step_rule!r}")
        if self.objective_scope not in SCOPES:
            bad(f"objective_scope must be one of {SCOPES}, got {self.objective_scope!r}")
        if self.sa.enabled and not (self.sa.T0 > 0 and 0 < self.sa.cooling < 1):
            bad(f"SA needs T0 > 0 and 0 < cooling < 1, got T0={self.sa.T0}, cooling={self.sa.cooling}")
        if len(self.init_color) != 3 or not all(0 <= c <= 1 for c in self.init_color):
            bad(f"init_color must be an RGB triple in [0,1], got {self.init_color}")
        if len(self.billboard_dims) != 2 or min(self.billboard_dims) < 1:
            bad(f"billboard_dims must be two positive ints, got {self.billboard_dims}")
        if self.tau <= 0:
            bad(f"tau must be positive, got {self.tau}")
        if not self.latent_margin >= 0 or not math.isfinite(self.latent_margin):
            bad(f"latent_margin must be finite and >= 0, got {self.latent_margin}")
        if self.audit_every < 1:
            bad(f"audit_every must be >= 1, got {self.audit_every}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_color"] = list(self.init_color)
        d["billboard_dims"] = list(self.billboard_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown attack config keys: {sorted(unknown)}")
        if "sa" in d:
            sa = d["sa"]
            if isinstance(sa, dict):
                unknown = set(sa) - set(SAConfig.__dataclass_fields__)
                if unknown:
                    raise ValidationError(f"unknown sa keys: {sorted(unknown)}")
                d["sa"] = SAConfig(**sa)
        if "init_color" in d:
            color = d["init_color"]
            if isinstance(color, str):
                from .gamut import hex_to_rgb
                color = hex_to_rgb(color)
            d["init_color"] = tuple(float(c) for c in color)
        if "billboard_dims" in d:
            d["billboard_dims"] = tuple(int(v) for v in d["billboard_dims"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad attack config: {exc}") from None

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class AttackReport:
    trace: list[dict]
    initial_objective: float
    best_objective: float
    evaluation: metrics.EvalResult
    config: dict
    audits: int = 0
    wall_clock_s: float = 0.0

    @property
    def m0(self) -> float:
        return self.evaluation.m0

    @property
    def m1(self) -> float:
        return self.evaluation.m1

    @property
    def objectives(self) -> np.ndarray:
        return np.array([row["objective"] for row in self.trace])

    @property
    def accepted(self) -> np.ndarray:
        return np.array([row["accepted"] for row in self.trace], dtype=bool)

    def objective_at_iteration(self, iteration: int) -> float:
        """Best objective reached by the end of the given (1-based) iteration."""
        best = self.initial_objective
        for row in self.trace:
            if row["iteration"] >= iteration:
                break
            best = max(best, row["best"])
        return best

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "initial_objective": self.initial_objective,
            "best_objective": self.best_objective,
            "m0_deg": self.m0,
            "m1": self.m1,
            "mean_abs_error_deg": self.evaluation.mean_abs_error,
            "tau_deg": self.evaluation.tau,
            "frame_count": self.evaluation.frame_count,
            "accepted_steps": int(self.accepted.sum()),
            "steps": len(self.trace),
            "audits": self.audits,
            "config": self.config,
            "trace": self.trace,
        }
        if timing:
            d["wall_clock_s"] = self.wall_clock_s
        return d

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "batch", "objective", "accepted", "temperature"])
        for row in self.trace:
            w.writerow([row["iteration"], row["batch"], repr(row["objective"]), int(row["accepted"]),
                        repr(row["temperature"])])
        return buf.getvalue()


def select_top_k(texel_grad: np.ndarray, k: int | None) -> np.ndarray:
    """Zero all but the ``k`` texels with the largest channel-summed |gradient|.

    Ties go to the lower row-major texel index.
    """
    texel_grad = np.asarray(texel_grad, dtype=np.float64)
    n = texel_grad.shape[1] * texel_grad.shape[2]
    if k is None or k >= n:
        return texel_grad.copy()
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    score = np.abs(texel_grad).sum(axis=0).ravel()
    keep = np.argsort(-score, kind="stable")[:k]
    mask = np.zeros(n, dtype=bool)
    mask[keep] = True
    return np.where(mask.reshape(texel_grad.shape[1:]), texel_grad, 0.0)


def handle_overlap(proposals, mode: str, evaluate=None) -> np.ndarray:
    """Merge per-frame texel proposals into one update map.

    ``max`` keeps, per texel channel, the proposal of largest magnitude (sign
    kept, earliest frame on ties); ``sum`` adds them. ``greedy_best`` visits
    texels proposed by more than one frame in row-major order and keeps the
    single frame's proposal that maximizes ``evaluate(merged)``; ``evaluate``
    scores a candidate merged map on the batch.
    """
    stack = np.stack([np.asarray(p, dtype=np.float64) for p in proposals])
    if mode == "sum":
        return stack.sum(axis=0)
    if mode == "max":
        pick = np.argmax(np.abs(stack), axis=0)
        return np.take_along_axis(stack, pick[None], axis=0)[0]
    if mode != "greedy_best":
        raise ValidationError(f"unknown overlap mode {mode!r}; expected one of {OVERLAP_MODES}")

    active = np.any(stack != 0, axis=1)  # (n_frames, Hb, Wb)
    conflict = active.sum(axis=0) > 1
    merged = np.where(conflict[None], 0.0, stack.sum(axis=0))
    if not conflict.any():
        return merged
    if evaluate is None:
        raise ValidationError("greedy_best overlap handling needs an evaluate callback")
    for r, c in zip(*np.nonzero(conflict)):
        best_val, best_score = None, -math.inf
        for j in np.flatnonzero(active[:, r, c]):
            merged[:, r, c] = stack[j, :, r, c]
            score = evaluate(merged)
            if score > best_score:
                best_val, best_score = stack[j, :, r, c].copy(), score
        merged[:, r, c] = best_val
    return merged


def sa_accept(delta_obj: float, temperature: float, rng: np.random.Generator) -> bool:
    """Metropolis rule: always take improvements, else with prob exp(delta/T)."""
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    if delta_obj > 0:
        return True
    return bool(rng.random() < math.exp(delta_obj / temperature))


class _Problem:
    """Frames, projection maps and the divergence score for one attack."""

    def __init__(self, scene: Scene, model: SteeringModel, gamut: Gamut, cfg: AttackConfig):
        self.scene = scene
        self.model = model
        self.gamut = gamut
        self.cfg = cfg
        self.sign = _DIRECTION_SIGN[cfg.direction]
        self.maps = scene.sampling_maps(cfg.billboard_dims)
        self.images = [f.image for f in scene.frames]
        self.adjs = [f.adj.as_array() for f in scene.frames]
        self.baselines = scene.baselines()
        n_workers = cfg.workers or int(os.environ.get("DEEPBB_THREADS", "1") or 1)
        self.workers = max(1, n_workers)

    def _map(self, fn, items):
        items = list(items)
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    def frame(self, texture: np.ndarray, i: int) -> np.ndarray:
        return self.maps[i].warp(texture, self.images[i], self.adjs[i])

    def scores(self, texture: np.ndarray, indices) -> np.ndarray:
        return np.array(self._map(
            lambda i: self.sign * (predict(self.model, self.frame(texture, i)) - self.baselines[i]), indices))

    def proposal(self, texture: np.ndarray, i: int) -> np.ndarray:
        _, grad = predict_and_gradient(self.model, self.frame(texture, i), self.sign)
        texel_grad = self.maps[i].pullback(grad, texture, self.adjs[i])
        return select_top_k(texel_grad, self.cfg.top_k)

    def step(self, latent: np.ndarray, merged: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(unprojected attempt, printable attempt)."""
        step = np.sign(merged) if self.cfg.step_rule == "sign" else merged
        m = self.cfg.latent_margin
        raw = np.clip(latent + self.cfg.step_size * step, -m, 1.0 + m)
        return raw, project_to_gamut(raw, self.gamut)

    def audit(self, texture: np.ndarray) -> None:
        for i, (m, orig) in enumerate(zip(self.maps, self.images)):
            out = self.frame(texture, i)
            outside = ~m.mask
            if not np.array_equal(out[:, outside], orig[:, outside]):
                raise SpatialConstraintError(f"frame {i}: pixels outside the billboard quad were modified")


def generate(scene: Scene, model: SteeringModel, gamut: Gamut, cfg: AttackConfig) -> tuple[Perturbation, AttackReport]:
    """Optimize one printable billboard texture against every frame of ``scene``."""
    started = time.perf_counter()
    cfg.validate(len(scene))
    if tuple(model.input_shape) != (3, *scene.frame_hw):
        raise ShapeError(f"model expects {model.input_shape}, scene frames are {(3, *scene.frame_hw)}")
    if scene.frames[0].baseline_angle is None:
        scene = scene.with_baselines(model)

    prob = _Problem(scene, model, gamut, cfg)
    rng = np.random.default_rng(cfg.seed)
    n = len(scene)
    all_idx = np.arange(n)
    hb, wb = cfg.billboard_dims

    # latent: the unprojected texture that steps accumulate on; perturb: its printable projection
    latent = np.broadcast_to(np.asarray(cfg.init_color, float)[:, None, None], (3, hb, wb)).copy()
    perturb = project_to_gamut(latent, gamut)
    if not cfg.keep_latent:
        latent = perturb
    current = prob.scores(perturb, all_idx)
    last_diff = float(current.sum())
    initial = last_diff
    best_texture, best_obj = perturb.copy(), last_diff
    trace = []
    audits = 0
    accepted_count = 0

    for it in range(cfg.iterations):
        temperature = cfg.sa.temperature(it) if cfg.sa.enabled else 0.0
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = order[start:start + cfg.batch_size]
            proposals = prob._map(lambda i: prob.proposal(perturb, i), batch)

            def batch_score(merged, _batch=batch):
                return float(prob.scores(prob.step(latent, merged)[1], _batch).sum())

            merged = handle_overlap(proposals, cfg.overlap_mode, batch_score)
            attempt_latent, attempt = prob.step(latent, merged)
            attempt_scores = prob.scores(attempt, all_idx)
            this_diff = float(attempt_scores.sum())

            if cfg.objective_scope == "batch":
                delta = float(attempt_scores[batch].sum() - current[batch].sum())
            else:
                delta = this_diff - last_diff
            if cfg.sa.enabled:
                accept = sa_accept(delta, temperature, rng)
            else:
                accept = delta > 0

            if accept:
                perturb, current, last_diff = attempt, attempt_scores, this_diff
                latent = attempt_latent if cfg.keep_latent else attempt
                accepted_count += 1
                if accepted_count % cfg.audit_every == 0:
                    prob.audit(perturb)
                    audits += 1
                if this_diff > best_obj:
                    best_texture, best_obj = perturb.copy(), this_diff
            elif cfg.keep_latent and np.array_equal(attempt, perturb):
                # same printable texture: let the latent drift so small steps can add up
                latent = attempt_latent
            trace.append({
                "step": len(trace),
                "iteration": it,
                "batch": b,
                "objective": this_diff,
                "accepted": bool(accept),
                "temperature": temperature,
                "best": best_obj,
            })

    evaluation = metrics.evaluate(scene, model, best_texture, cfg.tau, cfg.direction)
    meta = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "best_objective": best_obj,
        "trace_tail": [row["objective"] for row in trace[-5:]],
        "nps": nps_texture(best_texture, gamut),
    }
    report = AttackReport(trace, initial, best_obj, evaluation, cfg.to_dict(), audits,
                          time.perf_counter() - started)
    return Perturbation(best_texture, gamut, meta), report
