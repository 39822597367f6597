import numpy as np
import pytest
from scipy.optimize import minimize

from data_processor import CoefficientVector, Dataset
from models.lasso_model import (LassoConfig, LassoSolver, cross_validated_penalty, default_penalty, fit_lasso,
                                lasso_objective, penalty_grid, soft_threshold)
from utils.errors import ConfigError


def oracle_objective(d, penalty):
    """Smooth split-variable reformulation solved by L-BFGS-B"""
    X, y, n, p = d.design, d.response, d.n, d.p

    def f(z):
        beta = z[:p] - z[p:]
        resid = y - X @ beta
        grad_beta = -2.0 * X.T @ resid / n
        value = resid @ resid / n + penalty * z.sum()
        return value, np.concatenate([grad_beta + penalty, -grad_beta + penalty])

    result = minimize(f, np.zeros(2 * p), jac=True, method="L-BFGS-B", bounds=[(0, None)] * (2 * p),
                      options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
    return result.fun


class TestSoftThreshold:
    def test_values(self):
        assert soft_threshold(3.0, 1.0) == 2.0
        assert soft_threshold(-3.0, 1.0) == -2.0
        assert soft_threshold(0.5, 1.0) == 0.0

    def test_kink_resolves_to_zero(self):
        assert soft_threshold(1.0, 1.0) == 0.0
        assert soft_threshold(-1.0, 1.0) == 0.0


class TestDefaultPenalty:
    def test_rate(self):
        assert default_penalty(100, 50) == pytest.approx(2.0 * np.sqrt(np.log(50) / 100))

    def test_single_covariate_is_unpenalized(self):
        assert default_penalty(100, 1) == 0.0

    def test_invalid_scale(self):
        with pytest.raises(ConfigError):
            default_penalty(100, 10, scale=0.0)


class TestFitLasso:
    def test_matches_convex_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(4, 11))
            p = int(rng.integers(1, 4))
            d = Dataset(rng.standard_normal((n, p)), rng.standard_normal(n))
            penalty = float(rng.uniform(0.01, 1.0))
            fit = fit_lasso(d, LassoConfig(penalty, tolerance=1e-12, max_iterations=100_000))
            assert fit.converged
            assert fit.objective <= oracle_objective(d, penalty) + 1e-6

    def test_kkt_conditions(self):
        rng = np.random.default_rng(8)
        d = Dataset(rng.standard_normal((40, 8)), rng.standard_normal(40))
        penalty = 0.3
        beta = fit_lasso(d, LassoConfig(penalty, tolerance=1e-12)).coefficients.values
        grad = -2.0 * d.design.T @ (d.response - d.design @ beta) / d.n
        active = beta != 0.0
        np.testing.assert_allclose(grad[active], -penalty * np.sign(beta[active]), atol=1e-6)
        assert np.all(np.abs(grad[~active]) <= penalty + 1e-6)

    def test_orthonormal_design_closed_form(self):
        rng = np.random.default_rng(9)
        n, p = 20, 4
        q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        X = np.sqrt(n) * q
        y = X @ np.array([2.0, -0.3, 0.05, 0.0]) + 0.1 * rng.standard_normal(n)
        d = Dataset(X, y)
        penalty = 0.4
        z = X.T @ y / n
        expected = [soft_threshold(v, penalty / 2.0) for v in z]
        fit = fit_lasso(d, LassoConfig(penalty))
        np.testing.assert_allclose(fit.coefficients.values, expected, atol=1e-10)

    def test_zero_penalty_is_least_squares(self, small_dataset):
        fit = fit_lasso(small_dataset, LassoConfig(0.0, tolerance=1e-14, max_iterations=100_000))
        ols = np.linalg.lstsq(small_dataset.design, small_dataset.response, rcond=None)[0]
        np.testing.assert_allclose(fit.coefficients.values, ols, atol=1e-8)

    def test_large_penalty_gives_zero(self, small_dataset):
        top = penalty_grid(small_dataset)[0]
        fit = fit_lasso(small_dataset, LassoConfig(top * 1.01))
        assert fit.coefficients.support_size == 0

    def test_objective_trace_non_increasing(self, s1_dataset):
        fit = fit_lasso(s1_dataset, LassoConfig(default_penalty(s1_dataset.n, s1_dataset.p)))
        trace = np.array(fit.objective_trace)
        assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]).max())
        assert fit.objective == pytest.approx(lasso_objective(s1_dataset, fit.coefficients.values,
                                                              default_penalty(s1_dataset.n, s1_dataset.p)))

    def test_warm_start_reaches_same_solution(self, small_dataset):
        penalty = 0.2
        cold = fit_lasso(small_dataset, LassoConfig(penalty, tolerance=1e-12))
        warm = fit_lasso(small_dataset, LassoConfig(penalty, tolerance=1e-12,
                                                    warm_start=CoefficientVector(np.ones(5))))
        np.testing.assert_allclose(warm.coefficients.values, cold.coefficients.values, atol=1e-9)

    def test_more_sweeps_never_raise_objective(self, s1_dataset):
        penalty = default_penalty(s1_dataset.n, s1_dataset.p)
        for k in (1, 2, 3, 5, 8):
            short = fit_lasso(s1_dataset, LassoConfig(penalty, max_iterations=k, tolerance=1e-15))
            long = fit_lasso(s1_dataset, LassoConfig(penalty, max_iterations=2 * k, tolerance=1e-15))
            assert long.objective <= short.objective + 1e-12 * abs(short.objective), f"k={k}"

    def test_column_permutation_invariance(self):
        rng = np.random.default_rng(31)
        d = Dataset(rng.standard_normal((100, 20)), rng.standard_normal(100))
        penalty = default_penalty(d.n, d.p)
        base = fit_lasso(d, LassoConfig(penalty, tolerance=1e-12, max_iterations=100_000))
        for _ in range(5):
            order = rng.permutation(d.p)
            shuffled = fit_lasso(Dataset(d.design[:, order], d.response),
                                 LassoConfig(penalty, tolerance=1e-12, max_iterations=100_000))
            np.testing.assert_allclose(shuffled.coefficients.values, base.coefficients.values[order], atol=1e-8)

    def test_iteration_cap_flags_non_convergence(self, s1_dataset):
        fit = fit_lasso(s1_dataset, LassoConfig(0.01, max_iterations=1, tolerance=1e-14))
        assert not fit.converged
        assert fit.iterations_used == 1

    def test_negative_penalty_rejected(self):
        with pytest.raises(ConfigError):
            LassoConfig(-1.0)


class TestPenaltySelection:
    def test_cv_penalty_on_grid(self, small_dataset):
        penalty = cross_validated_penalty(small_dataset, folds=5, grid_size=20, seed=3)
        grid = penalty_grid(small_dataset, 20)
        assert np.min(np.abs(grid - penalty)) == 0.0

    def test_cv_is_reproducible(self, small_dataset):
        assert (cross_validated_penalty(small_dataset, folds=5, grid_size=10, seed=3)
                == cross_validated_penalty(small_dataset, folds=5, grid_size=10, seed=3))

    def test_solver_selectors(self, small_dataset):
        assert LassoSolver("fixed", penalty=0.5).resolve_penalty(small_dataset) == 0.5
        assert LassoSolver().resolve_penalty(small_dataset) == pytest.approx(
            default_penalty(small_dataset.n, small_dataset.p))
        with pytest.raises(ConfigError):
            LassoSolver("fixed")
        assert LassoSolver().get_model_info()['selector'] == "default"
