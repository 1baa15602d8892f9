import numpy as np
import pytest

from projflow.app import runner
from projflow.engine.dynamics import System
from projflow.engine.measure import Field, Partition
from projflow.engine.projection import make_projector
from projflow.engine.scenarios import builtin, materialize


def sine_system(m: int = 512, y0_value: float = 1.0):
    """Materialized sine forcing, n = 1, constant initial data."""
    scenario = builtin("sine-mean").with_overrides(m=m, c=y0_value)
    return materialize(scenario)


def random_system(rng: np.random.Generator, m: int = 24):
    """Non-uniform weights, non-constant positive n, arbitrary forcing."""
    p = Partition.from_weights(rng.uniform(0.1, 2.0, m))
    projector = make_projector(Field(rng.uniform(0.2, 3.0, m), p), p)
    sys = System.build(projector, Field(rng.normal(size=m), p))
    return sys


@pytest.fixture(scope="session")
def sine():
    return sine_system()


@pytest.fixture(scope="session")
def sine_mean_run():
    """The reference run: m=512, T=100, h=0.01, stride 10, log_rk4."""
    return runner.run_scenario(builtin("sine-mean"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
