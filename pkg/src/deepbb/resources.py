"""Paths to the bundled model and scene."""
from __future__ import annotations

from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent / "data"


def bundled_model_path() -> Path:
    """tiny_dave trained on synthetic road frames (``deepbb train --seed 0``)."""
    return DATA_DIR / "tiny_dave.dbw"


def bundled_scene_path() -> Path:
    """20-frame straight-road drive-by manifest (``deepbb render-synthetic --seed 0``)."""
    return DATA_DIR / "straight20" / "manifest.json"


def bundled_path_spec() -> Path:
    return DATA_DIR / "straight20_path.json"
