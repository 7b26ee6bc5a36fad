"""Attack metrics: mean signed angle error, threshold hit rate, off-track distance."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, ValidationError
from .models import predict

MPH_TO_MPS = 0.44704
DIRECTIONS = ("left", "right", "either")


def m0(errors) -> float:
    """Mean signed steering error f(x') - f(x), degrees."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValidationError("m0 of an empty error list")
    return float(np.mean(errors))


def m1(errors, tau: float, direction: str = "left") -> float:
    """Fraction of frames whose error exceeds ``tau`` in the given direction."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValidationError("m1 of an empty error list")
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    if direction == "left":
        hits = errors > tau
    elif direction == "right":
        hits = -errors > tau
    elif direction == "either":
        hits = np.abs(errors) > tau
    else:
        raise ValidationError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return float(np.count_nonzero(hits)) / errors.size


def off_track(v: float, i: float, alpha: float, alpha_prime: float) -> float:
    """Lateral drift in meters after ``i`` seconds at ``v`` m/s with a steering error."""
    if v < 0 or i <= 0:
        raise ValidationError(f"need v >= 0 and i > 0, got v={v}, i={i}")
    return v * i * math.sin(math.radians(alpha_prime - alpha))


def tau_for(v: float, i: float, offset: float) -> float:
    """Smallest steering error (degrees) producing ``offset`` meters of drift."""
    if v < 0 or i <= 0 or offset < 0:
        raise ValidationError(f"need v >= 0, i > 0, offset >= 0; got {v}, {i}, {offset}")
    reach = v * i
    if offset > reach:
        raise InfeasibleError(f"offset {offset} m exceeds v*i = {reach} m; no steering angle reaches it")
    return math.degrees(math.asin(offset / reach))


@dataclass
class EvalResult:
    baseline: np.ndarray
    perturbed: np.ndarray
    tau: float
    direction: str

    @property
    def errors(self) -> np.ndarray:
        return self.perturbed - self.baseline

    @property
    def m0(self) -> float:
        return m0(self.errors)

    @property
    def m1(self) -> float:
        return m1(self.errors, self.tau, self.direction)

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean(np.abs(self.errors)))

    @property
    def frame_count(self) -> int:
        return len(self.errors)

    def to_dict(self) -> dict:
        return {
            "m0_deg": self.m0,
            "m1": self.m1,
            "mean_abs_error_deg": self.mean_abs_error,
            "tau_deg": self.tau,
            "direction": self.direction,
            "frame_count": self.frame_count,
            "errors_deg": self.errors.tolist(),
        }

    def timeline_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_index", "baseline_deg", "perturbed_deg", "error_deg"])
        for i, (b, p) in enumerate(zip(self.baseline, self.perturbed)):
            w.writerow([i, repr(float(b)), repr(float(p)), repr(float(p - b))])
        return buf.getvalue()


def perturbed_frames(scene, texture, maps=None) -> list[np.ndarray]:
    texture = np.asarray(texture, dtype=np.float64)
    if maps is None:
        maps = scene.sampling_maps(texture.shape[1:])
    return [m.warp(texture, f.image, f.adj.as_array()) for m, f in zip(maps, scene.frames)]


def evaluate(scene, model, perturbation, tau: float = None, direction: str = "left") -> EvalResult:
    """Patch the texture into every frame and compare predictions to the baselines."""
    if tau is None:
        tau = tau_for(40 * MPH_TO_MPS, 0.2, 1.0)
    texture = getattr(perturbation, "texture", perturbation)
    if scene.frames[0].baseline_angle is None:
        scene = scene.with_baselines(model)
    baseline = scene.baselines()
    perturbed = np.array([predict(model, x) for x in perturbed_frames(scene, texture)])
    result = EvalResult(baseline, perturbed, float(tau), direction)
    result.m1  # validate tau/direction eagerly
    return result
