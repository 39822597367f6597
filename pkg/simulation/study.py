import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from models.debias_model import (credible_interval, debias_point, estimate_sandwich_variance,
                                 normal_interval, run_algorithm1)
from models.horseshoe_model import HorseshoeGibbs
from models.lasso_model import LassoSolver
from models.precision_model import PrecisionEstimator
from models.spike_slab_model import SpikeSlabVB
from simulation.scenarios import generate
from utils.errors import NUMERIC_FAILURES, ConfigError, DebayesError, NumericalError
from utils.random_streams import HORSESHOE, VB_DRAWS, WEIGHTS, derive_seed

logger = logging.getLogger(__name__)

METHODS = ("bayes", "debiased_bayes", "debiased_lasso")
PRIORS = ("spike_slab_vb", "horseshoe")
REPORT_FORMATS = ("csv", "json", "plotdata")
REPORT_COLUMNS = ["method", "group", "coverage", "bias", "rmse", "replications", "level"]
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class StudyConfig:
    replications: int = 200
    methods: tuple = METHODS
    level: float = 0.95
    seed: int = 0
    parallelism: int = 1
    draws: int = 8_000
    prior: str = "spike_slab_vb"
    burn_in: int = None

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s) {unknown}; valid: {list(METHODS)}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if self.draws < 2:
            raise ConfigError(f"draws must be >= 2, got {self.draws}")
        if self.prior not in PRIORS:
            raise ConfigError(f"unknown prior {self.prior!r}; valid: {list(PRIORS)}")
        # canonical order so reports do not depend on how methods were listed
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in self.methods))


@dataclass(frozen=True)
class MetricsTable:
    """Coverage, bias and RMSE per coefficient group for one method"""

    per_group: dict
    method: str
    replications: int
    level: float
    failures: int = field(default=0, compare=False)

    def __post_init__(self):
        for group, (coverage, _, _) in self.per_group.items():
            if not 0.0 <= coverage <= 1.0:
                raise NumericalError(f"coverage {coverage} of group {group} outside [0, 1]")

    def to_frame(self):
        rows = [
            {'method': self.method, 'group': g, 'coverage': cov, 'bias': bias, 'rmse': rmse,
             'replications': self.replications, 'level': self.level}
            for g, (cov, bias, rmse) in sorted(self.per_group.items())
        ]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def _initial_posterior(d, cfg, replication):
    if cfg.prior == "horseshoe":
        burn_in = cfg.draws if cfg.burn_in is None else cfg.burn_in
        sampler = HorseshoeGibbs(n_draws=cfg.draws, burn_in=burn_in)
        return sampler.posterior(d, derive_seed(cfg.seed, replication, HORSESHOE))
    _, draws = SpikeSlabVB().posterior(d, cfg.draws, derive_seed(cfg.seed, replication, VB_DRAWS))
    return draws


def _replicate(args):
    """One replication: estimates and interval hits per method, or the failure message"""
    scn, cfg, r = args
    try:
        d = generate(scn, cfg.seed, r)
        alpha = 1.0 - cfg.level
        results = {}

        theta = None
        if "debiased_bayes" in cfg.methods or "debiased_lasso" in cfg.methods:
            theta = PrecisionEstimator("nodewise").estimate(d)

        if "bayes" in cfg.methods or "debiased_bayes" in cfg.methods:
            initial = _initial_posterior(d, cfg, r)
            if "bayes" in cfg.methods:
                results["bayes"] = _draw_summary(initial.draws, alpha)
            if "debiased_bayes" in cfg.methods:
                debiased = run_algorithm1(d, initial, theta, derive_seed(cfg.seed, r, WEIGHTS))
                results["debiased_bayes"] = _draw_summary(debiased.draws, alpha)

        if "debiased_lasso" in cfg.methods:
            pilot = LassoSolver().fit(d).coefficients
            estimate = debias_point(d, theta, pilot).values
            variance = estimate_sandwich_variance(d, theta, pilot)
            bounds = [normal_interval(estimate, variance, d.n, j, alpha) for j in range(d.p)]
            results["debiased_lasso"] = (estimate, np.array([[ci.lower, ci.upper] for ci in bounds]))

        return r, results, None
    except DebayesError as e:
        return r, None, f"{type(e).__name__}: {e}"
    except NUMERIC_FAILURES as e:
        return r, None, f"NumericalError: {type(e).__name__}: {e}"


def _draw_summary(draws, alpha):
    bounds = [credible_interval(draws, j, alpha) for j in range(draws.shape[1])]
    return draws.mean(axis=0), np.array([[ci.lower, ci.upper] for ci in bounds])


def _collect(scn, cfg, show_progress):
    jobs = [(scn, cfg, r) for r in range(cfg.replications)]
    outcomes = {}
    pbar = tqdm(total=cfg.replications, desc=f"{scn.id} p={scn.p}", unit="rep", disable=not show_progress)

    if cfg.parallelism <= 1:
        for job in jobs:
            r, results, error = _replicate(job)
            outcomes[r] = (results, error)
            pbar.update(1)
    else:
        with ProcessPoolExecutor(max_workers=cfg.parallelism) as executor:
            futures = [executor.submit(_replicate, job) for job in jobs]
            for future in as_completed(futures):
                r, results, error = future.result()
                outcomes[r] = (results, error)
                pbar.update(1)
    pbar.close()

    # fold in replication order
    return [outcomes[r] for r in range(cfg.replications)]


def aggregate(scn, method, per_replication, level, failures=0):
    """Fold per-replication (estimate, bounds) pairs into a MetricsTable"""
    beta0 = scn.beta0.values
    estimates = np.vstack([est for est, _ in per_replication])
    bounds = np.stack([b for _, b in per_replication])
    hits = (bounds[:, :, 0] <= beta0) & (beta0 <= bounds[:, :, 1])
    errors = estimates - beta0

    per_group = {}
    for group, idx in scn.groups.items():
        per_group[group] = (
            float(hits[:, idx].mean()),
            float(errors[:, idx].mean()),
            float(np.sqrt(np.mean(errors[:, idx] ** 2))),
        )
    return MetricsTable(per_group, method, len(per_replication), level, failures)


def run_study(scn, replications=200, methods=METHODS, level=0.95, seed=0, parallelism=1,
              draws=8_000, prior="spike_slab_vb", burn_in=None, show_progress=False):
    """Replicate the scenario and score every method; one MetricsTable per method"""
    cfg = StudyConfig(replications, tuple(methods), level, seed, parallelism, draws, prior, burn_in)
    logger.info("Running %s (n=%d, p=%d): %d replications, methods %s",
                scn.id, scn.n, scn.p, cfg.replications, ", ".join(cfg.methods))

    outcomes = _collect(scn, cfg, show_progress)
    failed = [(r, error) for r, (_, error) in enumerate(outcomes) if error is not None]
    for r, error in failed:
        logger.warning("Replication %d failed and is excluded: %s", r, error)
    if len(failed) > MAX_FAILURE_RATE * cfg.replications or len(failed) == cfg.replications:
        raise NumericalError(f"{len(failed)} of {cfg.replications} replications failed "
                             f"(limit {MAX_FAILURE_RATE:.0%}); first error: {failed[0][1]}")

    succeeded = [results for results, error in outcomes if error is None]
    return [aggregate(scn, m, [res[m] for res in succeeded], cfg.level, len(failed)) for m in cfg.methods]


def _plotdata_text(tables):
    blocks = []
    for table in tables:
        lines = [f"# method={table.method} replications={table.replications} level={table.level:g}",
                 "# group coverage bias rmse"]
        for g, (cov, bias, rmse) in sorted(table.per_group.items()):
            lines.append(f"{g} {cov:.6f} {bias:.6f} {rmse:.6f}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def emit_report(tables, fmt, path):
    """Write the tables as csv, json or whitespace-delimited plot data"""
    tables = list(tables)
    if not tables:
        raise ConfigError("no metrics tables to report")
    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"unknown report format {fmt!r}; valid: {list(REPORT_FORMATS)}")

    path = Path(path)
    frame = pd.concat([t.to_frame() for t in tables], ignore_index=True)
    try:
        if fmt == "csv":
            frame.to_csv(path, index=False)
        elif fmt == "json":
            with open(path, "w", encoding="utf-8") as f:
                json.dump(frame.to_dict(orient="records"), f, indent=2)
        else:
            path.write_text(_plotdata_text(tables), encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot write report to {path}: {e}") from e
    return path


def print_summary(scn, tables):
    """Coverage / bias / RMSE table per method"""
    print("\n" + "=" * 60)
    print(f"SIMULATION SUMMARY: {scn.id} (n={scn.n}, p={scn.p}, "
          f"{scn.precision_truth}, {scn.error_model})")
    print("=" * 60)
    for table in tables:
        print(f"\n{table.method} (level {table.level:.2f}, {table.replications} replications"
              f"{f', {table.failures} failed' if table.failures else ''})")
        print(f"{'Group':<8} {'Coverage':<12} {'Bias':<12} {'RMSE':<12}")
        print("-" * 44)
        for g, (cov, bias, rmse) in sorted(table.per_group.items()):
            print(f"{g:<8} {cov:<12.4f} {bias:<12.4f} {rmse:<12.4f}")
