import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from data_processor import Dataset  # noqa: E402
from simulation.scenarios import SimulationScenario, generate  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_dataset(rng):
    """n=60, p=5 Gaussian design with a sparse signal"""
    X = rng.standard_normal((60, 5))
    beta = np.array([1.5, 0.0, -0.8, 0.0, 0.0])
    y = X @ beta + 0.5 * rng.standard_normal(60)
    return Dataset(X, y)


@pytest.fixture(scope="session")
def s1_dataset():
    """One S1 replication at n=100, p=50"""
    return generate(SimulationScenario.from_id("S1", n=100, p=50), seed=11)


def random_dataset(rng, n, p, noise=1.0):
    X = rng.standard_normal((n, p))
    beta = rng.standard_normal(p)
    return Dataset(X, X @ beta + noise * rng.standard_normal(n))
