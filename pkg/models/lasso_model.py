import logging
import math
from dataclasses import dataclass, field

import numpy as np

from data_processor import CoefficientVector
from utils.errors import ConfigError
from utils.random_streams import CV_FOLDS, stream

logger = logging.getLogger(__name__)

DEFAULT_PENALTY_SCALE = 2.0


@dataclass(frozen=True)
class LassoConfig:
    """Settings for (1/n)||y - Xb||^2 + penalty * ||b||_1"""

    penalty: float
    max_iterations: int = 10_000
    tolerance: float = 1e-8
    warm_start: CoefficientVector = None

    def __post_init__(self):
        if not self.penalty >= 0.0:
            raise ConfigError(f"penalty must be >= 0, got {self.penalty}")
        if not self.tolerance > 0.0:
            raise ConfigError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class LassoFit:
    coefficients: CoefficientVector
    objective: float
    iterations_used: int
    converged: bool
    objective_trace: tuple = field(default=(), repr=False)


def soft_threshold(value, threshold):
    """sign(value) * max(|value| - threshold, 0); the kink resolves to zero"""
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def default_penalty(n, p, scale=DEFAULT_PENALTY_SCALE):
    """scale * sqrt(log p / n); zero when p == 1"""
    if n < 2 or p < 1:
        raise ConfigError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    if not scale > 0.0:
        raise ConfigError(f"penalty scale must be > 0, got {scale}")
    return scale * math.sqrt(math.log(p) / n)


def lasso_objective(d, coefficients, penalty):
    beta = np.asarray(coefficients, dtype=np.float64)
    resid = d.response - d.design @ beta
    return float(resid @ resid / d.n + penalty * np.abs(beta).sum())


def coordinate_descent(gram, xty, yy, penalty, start=None, max_iterations=10_000, tolerance=1e-8):
    """Cyclic coordinate descent with covariance updates.

    gram = X'X/n, xty = X'y/n and yy = y'y/n. Returns
    (beta, iterations, converged, objective_trace) where the trace holds the
    objective after every sweep.
    """
    p = xty.shape[0]
    beta = np.zeros(p) if start is None else np.array(start, dtype=np.float64)
    diag = np.diag(gram).copy()
    # grad[j] = xty[j] - (gram @ beta)[j]
    grad = xty - gram @ beta
    half = 0.5 * penalty

    def objective():
        return float(yy - 2.0 * beta @ xty + beta @ (gram @ beta) + penalty * np.abs(beta).sum())

    trace = []
    previous = objective()
    converged = False
    sweep = 0
    for sweep in range(1, max_iterations + 1):
        max_change = 0.0
        for j in range(p):
            gjj = diag[j]
            old = beta[j]
            if gjj <= 0.0:
                new = 0.0
            else:
                new = soft_threshold(grad[j] + gjj * old, half) / gjj
            delta = new - old
            if delta != 0.0:
                grad -= gram[:, j] * delta
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)

        current = objective()
        if current > previous + 1e-12 * max(1.0, abs(previous)):
            logger.warning("LASSO objective increased on sweep %d: %.3e -> %.3e", sweep, previous, current)
        trace.append(current)
        previous = current
        if max_change < tolerance:
            converged = True
            break

    if not converged:
        logger.warning("LASSO did not converge in %d sweeps (penalty=%.4g)", max_iterations, penalty)
    return beta, sweep, converged, tuple(trace)


def fit_lasso(d, cfg):
    """LASSO fit of response on design under cfg"""
    gram = d.design.T @ d.design / d.n
    xty = d.design.T @ d.response / d.n
    yy = float(d.response @ d.response / d.n)

    start = None
    if cfg.warm_start is not None:
        start = cfg.warm_start.check_dimension(d.p).values

    beta, iterations, converged, trace = coordinate_descent(
        gram, xty, yy, cfg.penalty, start, cfg.max_iterations, cfg.tolerance
    )
    return LassoFit(
        coefficients=CoefficientVector(beta),
        objective=lasso_objective(d, beta, cfg.penalty),
        iterations_used=iterations,
        converged=converged,
        objective_trace=trace,
    )


def penalty_grid(d, size=50, ratio=1e-3):
    """Log-spaced grid from the all-zero penalty 2||X'y/n||_inf downwards"""
    top = 2.0 * float(np.max(np.abs(d.design.T @ d.response / d.n)))
    if top <= 0.0:
        return np.zeros(1)
    return np.geomspace(top, top * ratio, size)


def cross_validated_penalty(d, folds=10, grid_size=50, seed=0, tolerance=1e-6, max_iterations=1_000):
    """Penalty minimizing K-fold held-out squared error over penalty_grid"""
    if folds < 2 or folds > d.n:
        raise ConfigError(f"folds must lie in [2, n={d.n}], got {folds}")
    grid = penalty_grid(d, grid_size)
    assignment = stream(seed, CV_FOLDS).permutation(d.n) % folds
    errors = np.zeros((folds, grid.shape[0]))

    for k in range(folds):
        train = assignment != k
        X_tr, y_tr = d.design[train], d.response[train]
        X_te, y_te = d.design[~train], d.response[~train]
        n_tr = X_tr.shape[0]
        gram = X_tr.T @ X_tr / n_tr
        xty = X_tr.T @ y_tr / n_tr
        yy = float(y_tr @ y_tr / n_tr)

        beta = np.zeros(d.p)
        for g, penalty in enumerate(grid):
            beta, _, _, _ = coordinate_descent(gram, xty, yy, penalty, beta, max_iterations, tolerance)
            resid = y_te - X_te @ beta
            errors[k, g] = resid @ resid / resid.shape[0]

    mean_error = errors.mean(axis=0)
    best = int(np.argmin(mean_error))
    logger.info("Cross-validated penalty %.4g (grid index %d, CV error %.4g)", grid[best], best, mean_error[best])
    return float(grid[best])


class LassoSolver:
    """LASSO pilot with either the rate-based default penalty or a CV-selected one"""

    def __init__(self, selector="default", penalty_scale=DEFAULT_PENALTY_SCALE, penalty=None,
                 tolerance=1e-8, max_iterations=10_000, folds=10, seed=0):
        if selector not in ("default", "cv", "fixed"):
            raise ConfigError(f"unknown penalty selector {selector!r}")
        if selector == "fixed" and penalty is None:
            raise ConfigError("selector 'fixed' needs an explicit penalty")
        self.selector = selector
        self.penalty_scale = penalty_scale
        self.penalty = penalty
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.folds = folds
        self.seed = seed

    def resolve_penalty(self, d):
        if self.selector == "fixed":
            return float(self.penalty)
        if self.selector == "cv":
            return cross_validated_penalty(d, self.folds, seed=self.seed)
        return default_penalty(d.n, d.p, self.penalty_scale)

    def config_for(self, d):
        return LassoConfig(self.resolve_penalty(d), self.max_iterations, self.tolerance)

    def fit(self, d):
        return fit_lasso(d, self.config_for(d))

    def get_model_info(self):
        return {
            'model_name': 'Coordinate-Descent LASSO',
            'selector': self.selector,
            'penalty_scale': self.penalty_scale,
            'penalty': self.penalty,
            'tolerance': self.tolerance,
            'max_iterations': self.max_iterations,
            'description': 'Cyclic coordinate descent on (1/n)||y - Xb||^2 + rho ||b||_1'
        }
