"""Joint optimization of a single printable adversarial billboard across driving frames."""
from __future__ import annotations

from .gamut import Gamut, default_gamut
from .metrics import evaluate, tau_for
from .models import SteeringModel, load_weights, save_weights
from .optimizer import AttackConfig, AttackReport, SAConfig, generate
from .scene_io import Perturbation, Scene, load_perturbation, load_scene, save_perturbation, save_scene

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackReport", "Gamut", "Perturbation", "SAConfig", "Scene", "SteeringModel",
    "default_gamut", "evaluate", "generate", "load_perturbation", "load_scene", "load_weights",
    "save_perturbation", "save_scene", "save_weights", "tau_for",
]
