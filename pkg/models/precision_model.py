import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.optimize import linprog

from data_processor import gram_matrix
from models.lasso_model import coordinate_descent
from utils.errors import ConfigError, NumericalError
from utils.parallel import map_ordered

logger = logging.getLogger(__name__)

METHODS = ("nodewise", "clime", "direct_inverse")
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class PrecisionEstimate:
    """Estimated precision matrix with per-row tuning metadata.

    residual_scales holds tau_j^2 for nodewise, 1/theta_jj for the direct
    inverse and NaN for CLIME. node_coefficients (nodewise only) stores the
    p x p matrix whose row j is theta_j placed off the diagonal.
    """

    theta: np.ndarray
    method: str
    row_penalties: np.ndarray
    residual_scales: np.ndarray
    constraint_norm: float
    converged: bool = True
    node_coefficients: np.ndarray = None
    symmetrized: bool = False

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise NumericalError(f"precision estimate must be square, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise NumericalError("precision estimate has non-finite entries")
        if self.method not in METHODS:
            raise ConfigError(f"unknown precision method {self.method!r}")

    @property
    def p(self):
        return self.theta.shape[0]

    def bound(self):
        """Guaranteed bound on constraint_norm for the method, NaN when none holds"""
        if self.method == "nodewise":
            return float(np.max(self.row_penalties / self.residual_scales))
        if self.method == "clime":
            # symmetrizing moves entries off the LP optimum, so kappa no longer holds
            return float("nan") if self.symmetrized else float(np.max(self.row_penalties))
        return 1e-8

    def to_frame(self, column_names=None):
        names = list(column_names) if column_names is not None else [f"x{j + 1}" for j in range(self.p)]
        return pd.DataFrame(self.theta, index=names, columns=names)

    def diagnostics(self):
        return {
            'method': self.method,
            'p': self.p,
            'constraint_norm': self.constraint_norm,
            'constraint_bound': None if math.isnan(self.bound()) else self.bound(),
            'symmetrized': self.symmetrized,
            'converged': self.converged,
            'row_penalties': self.row_penalties.tolist(),
            'residual_scales': [None if math.isnan(v) else v for v in self.residual_scales.tolist()],
        }


def constraint_norm(theta, gram):
    """||Theta Omega - I||_max"""
    return float(np.max(np.abs(theta @ gram - np.eye(gram.shape[0]))))


def default_nodewise_penalties(n, p, scale=1.0):
    if p < 2:
        raise ConfigError(f"nodewise regression needs p >= 2, got p={p}")
    if not scale > 0.0:
        raise ConfigError(f"nodewise penalty scale must be > 0, got {scale}")
    return np.full(p, scale * math.sqrt(math.log(p) / n))


def _nodewise_row(args):
    d, gram, j, penalty, max_iterations, tolerance = args
    others = np.arange(d.p) != j
    # the nodewise objective carries 2 * lambda_j on the l1 term
    coef, _, converged, _ = coordinate_descent(
        gram[np.ix_(others, others)], gram[others, j], float(gram[j, j]),
        2.0 * penalty, None, max_iterations, tolerance,
    )
    resid = d.design[:, j] - d.design[:, others] @ coef
    tau2 = float(resid @ resid / d.n + penalty * np.abs(coef).sum())
    return coef, tau2, converged


def nodewise_lasso(d, penalties=None, max_iterations=10_000, tolerance=1e-8, workers=1):
    """Nodewise LASSO precision estimate, one regression per covariate"""
    if d.p < 2:
        raise ConfigError(f"nodewise regression needs p >= 2, got p={d.p}")
    if penalties is None:
        penalties = default_nodewise_penalties(d.n, d.p)
    penalties = np.broadcast_to(np.asarray(penalties, dtype=np.float64), (d.p,)).copy()
    if not np.all(penalties > 0.0):
        raise ConfigError("nodewise penalties must be positive")

    gram = gram_matrix(d)
    rows = map_ordered(
        _nodewise_row,
        [(d, gram, j, penalties[j], max_iterations, tolerance) for j in range(d.p)],
        workers=workers,
        processes=True,
    )

    theta = np.zeros((d.p, d.p))
    node = np.zeros((d.p, d.p))
    tau2 = np.zeros(d.p)
    converged = True
    for j, (coef, t2, ok) in enumerate(rows):
        if not t2 > 0.0:
            raise NumericalError(f"nodewise residual scale tau^2 <= 0 for column {j} (degenerate column)")
        others = np.arange(d.p) != j
        node[j, others] = coef
        theta[j] = -node[j] / t2
        theta[j, j] = 1.0 / t2
        tau2[j] = t2
        converged = converged and ok

    if not converged:
        logger.warning("Some nodewise regressions did not converge")

    return PrecisionEstimate(theta, "nodewise", penalties, tau2, constraint_norm(theta, gram),
                             converged, node)


def _clime_row(args):
    gram, j, kappa, max_iterations = args
    p = gram.shape[0]
    e_j = np.zeros(p)
    e_j[j] = 1.0
    # theta = plus - minus; |gram @ theta - e_j| <= kappa row by row
    A_ub = np.block([[gram, -gram], [-gram, gram]])
    b_ub = np.concatenate([kappa + e_j, kappa - e_j])
    result = linprog(
        np.ones(2 * p), A_ub=A_ub, b_ub=b_ub, bounds=(0, None), method="highs-ds",
        options={"maxiter": max_iterations, "primal_feasibility_tolerance": 1e-10,
                 "dual_feasibility_tolerance": 1e-10},
    )
    if result.status == 2:
        raise NumericalError(f"CLIME row {j} is infeasible; kappa={kappa:.4g} is too small")
    if result.status == 1:
        raise NumericalError(f"CLIME row {j} hit the LP iteration cap ({max_iterations})")
    if result.status != 0:
        raise NumericalError(f"CLIME row {j} failed: {result.message}")
    return result.x[:p] - result.x[p:]


def symmetrize_smaller(theta):
    """Keep, for each pair (i, j), the entry with the smaller absolute value"""
    keep = np.abs(theta) <= np.abs(theta.T)
    return np.where(keep, theta, theta.T)


def clime(d, kappa, symmetrize=False, max_iterations=100_000, workers=1):
    """CLIME precision estimate: p rowwise l1-minimization linear programs"""
    if not kappa > 0.0:
        raise ConfigError(f"CLIME kappa must be > 0, got {kappa}")
    gram = gram_matrix(d)
    rows = map_ordered(_clime_row, [(gram, j, kappa, max_iterations) for j in range(d.p)],
                       workers=workers, processes=True)
    theta = np.vstack(rows)

    slack = kappa - np.abs(theta @ gram - np.eye(d.p))
    if slack.min() < -1e-8:
        logger.warning("CLIME constraint violated by %.3e", -slack.min())
    if symmetrize:
        theta = symmetrize_smaller(theta)

    return PrecisionEstimate(theta, "clime", np.full(d.p, float(kappa)), np.full(d.p, np.nan),
                             constraint_norm(theta, gram), symmetrized=symmetrize)


def default_clime_kappa(d, scale=1.0, pilot=None):
    """scale * ||Theta_pilot||_inf * sqrt(log p / n) with a nodewise pilot"""
    if pilot is None:
        pilot = nodewise_lasso(d)
    row_sum_norm = float(np.max(np.abs(pilot.theta).sum(axis=1)))
    return scale * row_sum_norm * math.sqrt(math.log(d.p) / d.n)


def direct_inverse(d):
    """Inverse of the Gram matrix; only for p < n and a well-conditioned Gram"""
    if d.p >= d.n:
        raise NumericalError(f"direct inverse needs p < n, got p={d.p}, n={d.n}")
    gram = gram_matrix(d)
    condition = np.linalg.cond(gram)
    if not condition < MAX_CONDITION:
        raise NumericalError(f"Gram matrix is ill-conditioned (condition number {condition:.3e})")
    try:
        theta = linalg.solve(gram, np.eye(d.p), assume_a="pos")
    except linalg.LinAlgError as e:
        raise NumericalError(f"Gram matrix is singular: {e}") from e

    return PrecisionEstimate(theta, "direct_inverse", np.zeros(d.p), 1.0 / np.diag(theta),
                             constraint_norm(theta, gram))


class PrecisionEstimator:
    """Selects and runs one of the precision estimators"""

    def __init__(self, method="nodewise", scale=1.0, kappa=None, symmetrize=False, workers=1):
        if method == "direct":
            method = "direct_inverse"
        if method not in METHODS:
            raise ConfigError(f"unknown precision method {method!r}; choose from {list(METHODS)}")
        self.method = method
        self.scale = scale
        self.kappa = kappa
        self.symmetrize = symmetrize
        self.workers = workers

    def estimate(self, d):
        if self.method == "nodewise":
            estimate = nodewise_lasso(d, default_nodewise_penalties(d.n, d.p, self.scale), workers=self.workers)
        elif self.method == "clime":
            kappa = self.kappa if self.kappa is not None else default_clime_kappa(d, self.scale)
            estimate = clime(d, kappa, self.symmetrize, workers=self.workers)
        else:
            estimate = direct_inverse(d)
        logger.info("Precision estimate (%s): ||Theta Omega - I||_max = %.3e",
                    estimate.method, estimate.constraint_norm)
        return estimate

    def get_model_info(self):
        return {
            'model_name': 'Precision Matrix Estimator',
            'method': self.method,
            'scale': self.scale,
            'kappa': self.kappa,
            'symmetrize': self.symmetrize,
            'description': 'Nodewise LASSO, CLIME or direct inverse of X\'X/n'
        }
