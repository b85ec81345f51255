from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # oracles, echo_backend helpers

ECHO_BACKEND = Path(__file__).parent / "echo_backend.py"


def echo_address(*flags: str) -> str:
    return f"exec:{sys.executable} {ECHO_BACKEND} " + " ".join(flags)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_linear_model(weights: np.ndarray, biases: np.ndarray):
    """Single affine layer backend, bypassing file IO."""
    from ci_tta.inference import BuiltinBackend

    return BuiltinBackend([(np.asarray(weights, float), np.asarray(biases, float))])


def write_ramp_image(path, h=6, w=6, c=1):
    """Deterministic small test image on disk."""
    from ci_tta.imgcore import write_imgf

    img = (np.arange(h * w * c, dtype=np.float64).reshape(h, w, c)) / (h * w * c)
    write_imgf(path, img)
    return img
