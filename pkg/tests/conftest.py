import logging
import sys
from pathlib import Path

import numpy as np
import pytest

from umbra.classifier import FunctionClassifier
from umbra.color import lightness
from umbra.geometry import RegionMask
from umbra.pso import SwarmConfig

ORACLE_SCRIPT = Path(__file__).parent / "oracles" / "fake_oracle.py"


def lightness_confidences(mask: RegionMask, pivot: float = 70.0):
    """
    Two-class oracle: class 0 confidence rises with the mean L* over ``mask``.

    A flat grey 200 image (L* about 80.6) is class 0; darkening a quarter of
    the mask with k = 0.43 pushes the mean below ``pivot`` and flips it to 1.
    """
    def fn(x):
        mean_l = float(lightness(x[mask.bitmap]).mean())
        c0 = min(1.0, max(0.0, 0.5 + (mean_l - pivot) / 100.0))
        return [c0, 1.0 - c0]
    return fn


@pytest.fixture
def gray_image():
    return np.full((16, 16, 3), 200, dtype=np.uint8)


@pytest.fixture
def full_mask():
    return RegionMask.full(16, 16)


@pytest.fixture
def lightness_oracle(full_mask):
    return FunctionClassifier(lightness_confidences(full_mask), 2, name="lightness")


@pytest.fixture
def constant_true():
    """Always class 0 with margin 1.0."""
    return FunctionClassifier(lambda x: [1.0, 0.0], 2, name="constant")


@pytest.fixture
def small_swarm():
    return SwarmConfig(swarm_size=8, max_iters=5, restarts=2, seed=3)


@pytest.fixture
def oracle_cmd():
    def build(mode: str = "echo") -> list:
        return [sys.executable, str(ORACLE_SCRIPT), "--mode", mode]
    return build


@pytest.fixture(autouse=True)
def plain_umbra_logger():
    """Undo what the CLI's setup_logging does to the package logger."""
    yield
    logger = logging.getLogger("umbra")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.setLevel(logging.NOTSET)
    logger.propagate = True
