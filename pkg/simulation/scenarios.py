"""Monte Carlo designs S1-S6.

Covariates are mean-zero Gaussian rows with precision Theta_0 (diagonal
1..p or tridiagonal with 0.5 off the diagonal); the first five coefficients
are 0.25, 0.5, 0.75, 1 and 2 and the rest are zero.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from data_processor import CoefficientVector, Dataset
from utils.errors import ConfigError, NumericalError
from utils.random_streams import DATA, stream

logger = logging.getLogger(__name__)

SIGNALS = (0.25, 0.5, 0.75, 1.0, 2.0)
PRECISION_TRUTHS = ("diagonal_1_to_p", "banded_half")
ERROR_MODELS = ("gauss_unit", "chi2_centered", "hetero_abs_x1")

SCENARIOS = {
    'S1': ("diagonal_1_to_p", "gauss_unit"),
    'S2': ("diagonal_1_to_p", "chi2_centered"),
    'S3': ("diagonal_1_to_p", "hetero_abs_x1"),
    'S4': ("banded_half", "gauss_unit"),
    'S5': ("banded_half", "chi2_centered"),
    'S6': ("banded_half", "hetero_abs_x1"),
}


def true_coefficients(p):
    beta0 = np.zeros(p)
    k = min(p, len(SIGNALS))
    beta0[:k] = SIGNALS[:k]
    return CoefficientVector(beta0)


@dataclass(frozen=True)
class SimulationScenario:
    id: str
    n: int
    p: int
    beta0: CoefficientVector
    precision_truth: str
    error_model: str

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise ConfigError(f"scenario needs n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        if self.precision_truth not in PRECISION_TRUTHS:
            raise ConfigError(f"unknown precision truth {self.precision_truth!r}")
        if self.error_model not in ERROR_MODELS:
            raise ConfigError(f"unknown error model {self.error_model!r}")
        self.beta0.check_dimension(self.p)

    @classmethod
    def from_id(cls, scenario_id, n=100, p=50):
        key = str(scenario_id).upper()
        if key not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario_id!r}; valid names: {', '.join(SCENARIOS)}")
        precision_truth, error_model = SCENARIOS[key]
        return cls(key, int(n), int(p), true_coefficients(int(p)), precision_truth, error_model)

    @property
    def groups(self):
        """Coefficient indices per reporting group: 0 for the zeros, 1..5 by ascending signal"""
        values = self.beta0.values
        nonzero = np.flatnonzero(values)
        ordered = nonzero[np.argsort(values[nonzero], kind="stable")]
        groups = {0: np.flatnonzero(values == 0.0)}
        for g, j in enumerate(ordered, start=1):
            groups[g] = np.array([j])
        return {g: idx for g, idx in groups.items() if idx.size > 0}


def precision_matrix(scn):
    """Theta_0 for the scenario"""
    if scn.precision_truth == "diagonal_1_to_p":
        return np.diag(np.arange(1.0, scn.p + 1.0))
    theta = np.eye(scn.p)
    idx = np.arange(scn.p - 1)
    theta[idx, idx + 1] = 0.5
    theta[idx + 1, idx] = 0.5
    return theta


def sample_design(scn, rng, n=None):
    """n rows i.i.d. N(0, Theta_0^{-1})"""
    n = scn.n if n is None else n
    z = rng.standard_normal((n, scn.p))
    if scn.precision_truth == "diagonal_1_to_p":
        return z / np.sqrt(np.arange(1.0, scn.p + 1.0))

    try:
        lower = linalg.cholesky(precision_matrix(scn), lower=True)
    except linalg.LinAlgError as e:
        raise NumericalError(f"banded precision is not positive definite at p={scn.p}") from e
    # Theta_0 = L L' so x = L'^{-1} z has covariance Theta_0^{-1}
    return linalg.solve_triangular(lower, z.T, lower=True, trans="T").T


def sample_errors(scn, rng, X):
    n = X.shape[0]
    if scn.error_model == "gauss_unit":
        return rng.standard_normal(n)
    if scn.error_model == "chi2_centered":
        return rng.chisquare(3, n) - 3.0
    return (1.0 + np.abs(X[:, 0])) * rng.standard_normal(n)


def generate(scn, seed, replication=0):
    """One dataset y = X beta0 + eps from stream (seed, replication)"""
    rng = stream(seed, replication, DATA)
    X = sample_design(scn, rng)
    eps = sample_errors(scn, rng, X)
    return Dataset(X, X @ scn.beta0.values + eps)
