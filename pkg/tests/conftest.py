import numpy as np
import pytest

from objectadd.backend import ToyBackend
from objectadd.types import BinaryMask, Box, EditSpec, GuidanceConfig, Latent


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    label = report.nodeid.rsplit("::", 1)[-1]
    status = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] {status}: {label}", flush=True)


@pytest.fixture
def backend():
    return ToyBackend(seed=1)


@pytest.fixture
def config():
    return GuidanceConfig()


@pytest.fixture
def box():
    return Box(top=10, left=12, height=28, width=26)


@pytest.fixture
def edit_spec(box):
    return EditSpec(
        base_prompt="a woman wearing glasses",
        object_prompt="a hat",
        box=box,
        seed=7,
    )


def random_latent(seed: int, hw: int = 16, c: int = 4, t: int = 15, scale: float = 1.0) -> Latent:
    rng = np.random.default_rng(seed)
    return Latent(scale * rng.standard_normal((hw, hw, c)), t)


def random_mask(seed: int, hw: int, density: float = 0.3, tag: str = "full") -> BinaryMask:
    rng = np.random.default_rng(seed)
    return BinaryMask((rng.random((hw, hw)) < density).astype(np.uint8), tag)
