"""Gibbs sampler for horseshoe-prior linear regression.

Hierarchy (independently over j):

    y | beta, sigma      ~ N(X beta, sigma^2 I)
    beta_j | lambda_j    ~ N(0, lambda_j^2)
    lambda_j | tau       ~ C+(0, tau)
    tau | sigma          ~ C+(0, sigma)
    sigma                ~ C+(0, sigma_scale)

Each half-Cauchy is written as an inverse-gamma mixture
(x^2 | a ~ IG(1/2, 1/a), a ~ IG(1/2, 1/A^2) gives x ~ C+(0, A)), so every
full conditional is Gaussian or inverse-gamma.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from models.spike_slab_model import PosteriorDrawSet
from utils.errors import ConfigError, NumericalError
from utils.parallel import map_ordered
from utils.random_streams import HORSESHOE, stream

logger = logging.getLogger(__name__)

JITTER = 1e-10
PRIOR_ONLY = 1 << 20
# floor for every squared scale in a chain; X'X / SCALE_FLOOR stays finite
SCALE_FLOOR = float(np.finfo(float).tiny ** 0.5)


@dataclass(frozen=True)
class HorseshoeConfig:
    n_draws: int = 8_000
    burn_in: int = 8_000
    seed: int = 0
    sigma_scale: float = 10.0
    fixed_sigma: float = None

    def __post_init__(self):
        if self.n_draws < 1:
            raise ConfigError(f"n_draws must be >= 1, got {self.n_draws}")
        if self.burn_in < 0:
            raise ConfigError(f"burn_in must be >= 0, got {self.burn_in}")
        if not self.sigma_scale > 0.0:
            raise ConfigError(f"sigma_scale must be > 0, got {self.sigma_scale}")
        if self.fixed_sigma is not None and not self.fixed_sigma > 0.0:
            raise ConfigError(f"fixed_sigma must be > 0, got {self.fixed_sigma}")


def _inv_gamma(rng, shape, scale):
    """Inverse-gamma draw(s) with the given shape and scale"""
    return scale / rng.gamma(shape, 1.0, size=np.shape(scale))


class _BetaSampler:
    """Joint Gaussian draw of beta given all scales"""

    def __init__(self, X, y):
        self.X = X
        self.y = y
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.n, self.p = X.shape
        self.jitter_events = 0

    def _cholesky(self, matrix):
        try:
            return linalg.cho_factor(matrix, lower=True)
        except linalg.LinAlgError:
            self.jitter_events += 1
            logger.warning("Singular conditional covariance; adding %.0e jitter", JITTER)
            return linalg.cho_factor(matrix + JITTER * np.eye(matrix.shape[0]), lower=True)

    def draw(self, rng, lambda2, sigma2):
        if self.p <= self.n:
            # precision A = X'X / sigma^2 + diag(1 / lambda^2)
            precision = self.XtX / sigma2 + np.diag(1.0 / lambda2)
            factor = self._cholesky(precision)
            mean = linalg.cho_solve(factor, self.Xty / sigma2)
            z = rng.standard_normal(self.p)
            lower = factor[0]
            return mean + linalg.solve_triangular(lower, z, lower=True, trans="T")

        # p > n: solve in n dimensions
        sigma = math.sqrt(sigma2)
        Phi = self.X / sigma
        u = np.sqrt(lambda2) * rng.standard_normal(self.p)
        delta = rng.standard_normal(self.n)
        v = Phi @ u + delta
        system = (Phi * lambda2) @ Phi.T + np.eye(self.n)
        w = linalg.cho_solve(self._cholesky(system), self.y / sigma - v)
        return u + lambda2 * (Phi.T @ w)


def _floor(value):
    """Clamp squared scales at SCALE_FLOOR; returns the clamped value and how many entries moved"""
    hits = int(np.count_nonzero(np.asarray(value) < SCALE_FLOOR))
    if np.ndim(value) == 0:
        return max(float(value), SCALE_FLOOR), hits
    return np.maximum(value, SCALE_FLOOR), hits


def _run_chain(d, cfg, chain):
    rng = stream(cfg.seed, HORSESHOE, chain)
    sampler = _BetaSampler(d.design, d.response)
    n, p = d.n, d.p
    floor_events = 0

    beta = np.zeros(p)
    lambda2 = np.ones(p)
    nu = np.ones(p)
    tau2 = 1.0
    xi = 1.0
    if cfg.fixed_sigma is not None:
        sigma2 = cfg.fixed_sigma ** 2
    else:
        sigma2 = max(float(np.var(d.response)), 1e-6)
    zeta = 1.0

    total = cfg.burn_in + cfg.n_draws
    draws = np.empty((cfg.n_draws, p))
    scale_trace = np.empty((cfg.n_draws, 2))

    for it in range(total):
        try:
            beta = sampler.draw(rng, lambda2, sigma2)
        except (ValueError, linalg.LinAlgError) as e:
            raise NumericalError(
                f"horseshoe chain {chain} failed to draw beta at iteration {it} ({type(e).__name__}: {e}): "
                f"min lambda^2={np.min(lambda2):.3e}, max lambda^2={np.max(lambda2):.3e}, "
                f"tau^2={tau2:.3e}, sigma^2={sigma2:.3e}, floor events={floor_events}"
            ) from e

        lambda2, hits = _floor(_inv_gamma(rng, 1.0, 1.0 / nu + 0.5 * beta ** 2))
        floor_events += hits
        nu, hits = _floor(_inv_gamma(rng, 1.0, 1.0 / tau2 + 1.0 / lambda2))
        floor_events += hits
        tau2, hits = _floor(_inv_gamma(rng, 0.5 * (p + 1), 1.0 / xi + np.sum(1.0 / nu)))
        floor_events += hits
        xi, hits = _floor(_inv_gamma(rng, 1.0, 1.0 / sigma2 + 1.0 / tau2))
        floor_events += hits

        if cfg.fixed_sigma is None:
            resid = d.response - d.design @ beta
            sigma2, hits = _floor(_inv_gamma(rng, 0.5 * (n + 2), 0.5 * resid @ resid + 1.0 / xi + 1.0 / zeta))
            floor_events += hits
            zeta, hits = _floor(_inv_gamma(rng, 1.0, 1.0 / cfg.sigma_scale ** 2 + 1.0 / sigma2))
            floor_events += hits

        if not (np.all(np.isfinite(beta)) and np.all(lambda2 > 0.0) and tau2 > 0.0 and sigma2 > 0.0):
            raise NumericalError(
                f"horseshoe chain {chain} produced a non-finite or non-positive state at iteration {it}: "
                f"max|beta|={np.nanmax(np.abs(beta)):.3e}, min lambda^2={np.min(lambda2):.3e}, "
                f"tau^2={tau2:.3e}, sigma^2={sigma2:.3e}"
            )

        if it >= cfg.burn_in:
            row = it - cfg.burn_in
            draws[row] = beta
            scale_trace[row] = (math.sqrt(tau2), math.sqrt(sigma2))

    if floor_events:
        logger.warning("Horseshoe chain %d clamped %d scale draws at %.1e", chain, floor_events, SCALE_FLOOR)
    return draws, scale_trace, sampler.jitter_events + floor_events


def sample_horseshoe(d, cfg=None):
    """Retained Gibbs draws of beta (burn-in discarded), reproducible given cfg.seed"""
    cfg = cfg or HorseshoeConfig()
    draws, scale_trace, jitter_events = _run_chain(d, cfg, 0)
    diagnostics = {
        'jitter_events': jitter_events,
        'tau_mean': float(scale_trace[:, 0].mean()),
        'sigma_mean': float(scale_trace[:, 1].mean()),
    }
    return PosteriorDrawSet(draws, "horseshoe_mcmc", debiased=False, seed=cfg.seed, diagnostics=diagnostics)


def split_rhat(chains):
    """Split-chain potential scale reduction for an (m chains x N draws) array"""
    chains = np.asarray(chains, dtype=np.float64)
    m, N = chains.shape
    half = N // 2
    if half < 2:
        raise ConfigError("need at least four draws per chain for split R-hat")
    splits = np.vstack([chains[:, :half], chains[:, half:2 * half]])
    within = splits.var(axis=1, ddof=1).mean()
    between = half * splits.mean(axis=1).var(ddof=1)
    if within <= 0.0:
        return 1.0
    var_plus = (half - 1) / half * within + between / half
    return float(math.sqrt(var_plus / within))


def run_chains(d, cfg, n_chains=4, workers=1):
    """Independent chains keyed (seed, chain) plus per-coefficient split R-hat"""
    results = map_ordered(lambda c: _run_chain(d, cfg, c), range(n_chains), workers=workers)
    stacked = np.stack([r[0] for r in results])
    rhat = [split_rhat(stacked[:, :, j]) for j in range(d.p)]
    diagnostics = {
        'chains': n_chains,
        'rhat': rhat,
        'max_rhat': float(max(rhat)),
        'jitter_events': int(sum(r[2] for r in results)),
    }
    return stacked, diagnostics


def sample_horseshoe_prior(p, n_draws, seed=0, sigma_scale=10.0):
    """Draws of beta from the prior alone (no data)"""
    rng = stream(seed, HORSESHOE, PRIOR_ONLY)
    sigma = sigma_scale * np.abs(rng.standard_cauchy((n_draws, 1)))
    tau = sigma * np.abs(rng.standard_cauchy((n_draws, 1)))
    lam = tau * np.abs(rng.standard_cauchy((n_draws, p)))
    return lam * rng.standard_normal((n_draws, p))


class HorseshoeGibbs:
    """Horseshoe prior posterior by all-conjugate Gibbs sampling"""

    def __init__(self, n_draws=8_000, burn_in=8_000, sigma_scale=10.0, fixed_sigma=None):
        self.n_draws = n_draws
        self.burn_in = burn_in
        self.sigma_scale = sigma_scale
        self.fixed_sigma = fixed_sigma

    def posterior(self, d, seed):
        cfg = HorseshoeConfig(self.n_draws, self.burn_in, seed, self.sigma_scale, self.fixed_sigma)
        return sample_horseshoe(d, cfg)

    def get_model_info(self):
        return {
            'model_name': 'Horseshoe Gibbs Sampler',
            'n_draws': self.n_draws,
            'burn_in': self.burn_in,
            'sigma_scale': self.sigma_scale,
            'fixed_sigma': self.fixed_sigma,
            'description': 'Half-Cauchy local/global scales via inverse-gamma auxiliaries'
        }
