import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from data_processor import CoefficientVector, CredibleInterval
from models.lasso_model import fit_lasso
from utils.errors import ConfigError, DataError, NumericalError
from utils.parallel import map_ordered
from utils.random_streams import WEIGHTS, chunk_bounds, stream

logger = logging.getLogger(__name__)

# rows per block; fixed so results never depend on the worker count
DEBIAS_CHUNK = 512


@dataclass(frozen=True)
class WeightVector:
    """Bayesian bootstrap weights: normalized unit exponentials"""

    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] < 1:
            raise DataError("weight vector must have at least one entry")
        if not np.all(weights > 0.0):
            raise NumericalError("bootstrap weights must be strictly positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise NumericalError(f"bootstrap weights sum to {weights.sum():.15f}, not 1")
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class DebiasedDrawSet:
    draws: np.ndarray
    source_prior: str
    precision_method: str
    center_estimate: CoefficientVector = None
    seed: int = 0

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=np.float64)
        if draws.ndim != 2 or draws.shape[0] < 1:
            raise NumericalError(f"debiased draws must be a non-empty B x p matrix, got shape {draws.shape}")
        if not np.all(np.isfinite(draws)):
            raise NumericalError("debiased draws contain non-finite entries")
        object.__setattr__(self, "draws", draws)

    @property
    def B(self):
        return self.draws.shape[0]

    @property
    def p(self):
        return self.draws.shape[1]

    def posterior_mean(self):
        return self.draws.mean(axis=0)


def _weight_row(seed, b, n):
    omega = stream(seed, WEIGHTS, b).standard_exponential(n)
    return omega / omega.sum()


def weight_matrix(n, start, stop, seed):
    """Rows b = start..stop-1 of the B x n weight matrix, each from stream (seed, b)"""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    return np.vstack([_weight_row(seed, b, n) for b in range(start, stop)])


def draw_weights(n, B, seed):
    if B < 1:
        raise ConfigError(f"B must be >= 1, got {B}")
    return [WeightVector(row) for row in weight_matrix(n, 0, B, seed)]


def _check_dimensions(p, theta, d):
    if theta.p != d.p or p != d.p:
        raise DataError(f"dimension mismatch: coefficients p={p}, precision p={theta.p}, data p={d.p}")


def debias_draw(beta, w, theta, d):
    """beta + Theta * sum_i W_i X_i (Y_i - X_i' beta)"""
    values = beta.values if isinstance(beta, CoefficientVector) else np.asarray(beta, dtype=np.float64)
    weights = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=np.float64)
    _check_dimensions(values.shape[0], theta, d)
    if weights.shape[0] != d.n:
        raise DataError(f"weight vector has length {weights.shape[0]}, data has n={d.n}")
    resid = d.response - d.design @ values
    correction = theta.theta @ (d.design.T @ (weights * resid))
    return CoefficientVector(values + correction)


def _debias_block(args):
    draws, start, stop, X, y, theta, seed = args
    block = draws[start:stop]
    W = weight_matrix(X.shape[0], start, stop, seed)
    resid = y[None, :] - block @ X.T
    scores = (W * resid) @ X
    return block + scores @ theta.T


def run_algorithm1(d, initial, theta, seed, workers=1):
    """Debias every initial draw with its own Bayesian bootstrap weights"""
    if initial.debiased:
        raise ConfigError("initial draw set is already debiased")
    _check_dimensions(initial.p, theta, d)

    blocks = chunk_bounds(initial.B, DEBIAS_CHUNK)
    parts = map_ordered(
        _debias_block,
        [(initial.draws, a, b, d.design, d.response, theta.theta, seed) for a, b in blocks],
        workers=workers,
    )
    return DebiasedDrawSet(np.vstack(parts), initial.prior_tag, theta.method, seed=seed)


def debias_point(d, theta, pilot):
    """Uniform-weight correction of a pilot estimate"""
    values = pilot.values if isinstance(pilot, CoefficientVector) else np.asarray(pilot, dtype=np.float64)
    _check_dimensions(values.shape[0], theta, d)
    resid = d.response - d.design @ values
    return CoefficientVector(values + theta.theta @ (d.design.T @ resid) / d.n)


def debiased_lasso(d, theta, lasso_cfg):
    """LASSO pilot plus the uniform-weight correction"""
    pilot = fit_lasso(d, lasso_cfg)
    if not pilot.converged:
        logger.warning("LASSO pilot did not converge; debiased estimate uses the last iterate")
    return debias_point(d, theta, pilot.coefficients)


def _column(draws, j):
    matrix = draws.draws if hasattr(draws, "draws") else np.asarray(draws, dtype=np.float64)
    if matrix.shape[0] < 2:
        raise ConfigError(f"need at least 2 draws for a credible interval, got {matrix.shape[0]}")
    if not 0 <= j < matrix.shape[1]:
        raise ConfigError(f"coefficient index {j} outside [0, {matrix.shape[1]})")
    return matrix[:, j]


def credible_interval(draws, j, alpha):
    """Equal-tailed interval between the alpha/2 and 1 - alpha/2 empirical quantiles.

    Quantiles interpolate linearly between order statistics at position
    q * (B - 1) (zero-based).
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    lower, upper = np.quantile(_column(draws, j), [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
    return CredibleInterval(float(lower), float(upper), 1.0 - alpha, j)


def estimate_sandwich_variance(d, theta, residual_source):
    """sigma_j^2 = e_j' Theta [(1/n) sum_i X_i X_i' e_i^2] Theta' e_j"""
    values = residual_source.values if isinstance(residual_source, CoefficientVector) else np.asarray(residual_source)
    _check_dimensions(values.shape[0], theta, d)
    resid = d.response - d.design @ values
    projected = d.design @ theta.theta.T
    return np.mean(projected ** 2 * (resid ** 2)[:, None], axis=0)


def normal_interval(estimate, variance, n, j, alpha):
    """estimate_j -/+ z_{1 - alpha/2} sqrt(variance_j / n)"""
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    half_width = z * np.sqrt(variance[j] / n)
    return CredibleInterval(float(estimate[j] - half_width), float(estimate[j] + half_width), 1.0 - alpha, j)


def simultaneous_band(draws, indices, alpha):
    """Joint band over a coefficient set from the max standardized deviation.

    Returns (lower, upper, critical_value) arrays over ``indices``.
    """
    matrix = draws.draws if hasattr(draws, "draws") else np.asarray(draws, dtype=np.float64)
    sub = matrix[:, list(indices)]
    if sub.shape[0] < 2:
        raise ConfigError("need at least 2 draws for a simultaneous band")
    center = sub.mean(axis=0)
    spread = sub.std(axis=0, ddof=1)
    spread = np.where(spread > 0.0, spread, np.finfo(float).tiny)
    max_t = np.max(np.abs(sub - center) / spread, axis=1)
    critical = float(np.quantile(max_t, 1.0 - alpha, method="linear"))
    return center - critical * spread, center + critical * spread, critical


def posterior_summary(raw, debiased, alpha, column_names=None, transform=None):
    """Side-by-side mean and interval table for raw and debiased draws"""
    p = debiased.p
    names = list(column_names) if column_names is not None else [f"x{j + 1}" for j in range(p)]
    transform = transform or (lambda v: v)
    raw_draws = transform(raw.draws)
    deb_draws = transform(debiased.draws)
    rows = []
    for j in range(p):
        raw_ci = credible_interval(raw_draws, j, alpha)
        deb_ci = credible_interval(deb_draws, j, alpha)
        rows.append({
            'index': j,
            'name': names[j],
            'raw_mean': float(raw_draws[:, j].mean()),
            'raw_lower': raw_ci.lower,
            'raw_upper': raw_ci.upper,
            'mean': float(deb_draws[:, j].mean()),
            'lower': deb_ci.lower,
            'upper': deb_ci.upper,
            'level': 1.0 - alpha,
        })
    return pd.DataFrame(rows)


class DebiasedBayes:
    """Algorithm driver: initial posterior draws in, debiased draws and intervals out"""

    def __init__(self, level=0.95, workers=1):
        if not 0.0 < level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {level}")
        self.level = level
        self.workers = workers

    @property
    def alpha(self):
        return 1.0 - self.level

    def debias(self, d, initial, theta, seed):
        return run_algorithm1(d, initial, theta, seed, self.workers)

    def intervals(self, draws):
        return [credible_interval(draws, j, self.alpha) for j in range(draws.p)]

    def get_model_info(self):
        return {
            'model_name': 'Debiased Bayes',
            'level': self.level,
            'weights': 'Bayesian bootstrap (normalized Exp(1))',
            'description': 'Posterior draws shifted by Theta * weighted score with fresh weights per draw'
        }
