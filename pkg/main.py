import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
from scipy import stats

from data_processor import DataProcessor, write_standardization_sidecar
from models.debias_model import DebiasedBayes, posterior_summary, weight_matrix
from models.horseshoe_model import HorseshoeGibbs
from models.precision_model import PrecisionEstimator
from models.spike_slab_model import SpikeSlabVB
from simulation.scenarios import SCENARIOS, SimulationScenario
from simulation.study import METHODS, REPORT_FORMATS, emit_report, print_summary, run_study
from utils.errors import ConfigError, DebayesError, numerical_failures
from utils.parallel import default_workers

logger = logging.getLogger("debayes")

MIN_DRAWS = 100
PRIORS = ("spike_slab_vb", "horseshoe")
PRECISION_METHODS = ("nodewise", "clime", "direct")


@dataclass(frozen=True)
class AnalysisConfig:
    input_path: str
    response_column: str = "0"
    prior: str = "spike_slab_vb"
    precision_method: str = "nodewise"
    B: int = 8_000
    level: float = 0.95
    seed: int = 0
    standardize: bool = False
    output_path: str = "results"
    slab_lambda: float = 1.0
    u: float = 1.0
    noise_variance: float = None
    burn_in: int = None
    precision_scale: float = 1.0
    kappa: float = None
    write_draws: bool = False
    dashboard: bool = False

    def __post_init__(self):
        if not self.input_path:
            raise ConfigError("analyze needs an input file (--input)")
        if self.prior not in PRIORS:
            raise ConfigError(f"unknown prior {self.prior!r}; valid: {list(PRIORS)}")
        if self.precision_method not in PRECISION_METHODS:
            raise ConfigError(f"unknown precision method {self.precision_method!r}; "
                              f"valid: {list(PRECISION_METHODS)}")
        if self.B < MIN_DRAWS:
            raise ConfigError(f"B must be >= {MIN_DRAWS} for interval output, got {self.B}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")


class DebiasedInferencePipeline:
    """Data -> initial posterior -> precision estimate -> debiased draws -> reports"""

    def __init__(self, cfg, workers=1):
        self.cfg = cfg
        self.workers = workers
        self.timings = {}
        self.diagnostics = {}

        if cfg.prior == "horseshoe":
            burn_in = cfg.B if cfg.burn_in is None else cfg.burn_in
            self.prior_model = HorseshoeGibbs(n_draws=cfg.B, burn_in=burn_in)
        else:
            self.prior_model = SpikeSlabVB(cfg.slab_lambda, cfg.u, cfg.noise_variance)
        self.precision_model = PrecisionEstimator(cfg.precision_method, cfg.precision_scale,
                                                  cfg.kappa, workers=workers)
        self.debiaser = DebiasedBayes(cfg.level, workers)

    def _timed(self, name, func, *args):
        start = time.perf_counter()
        result = func(*args)
        self.timings[name] = round(time.perf_counter() - start, 4)
        return result

    def load_dataset(self):
        print("Loading dataset...")
        processor = DataProcessor(self.cfg.input_path, self.cfg.response_column, self.cfg.standardize)
        d = self._timed("load", processor.load_dataset)
        processor.validate_dataset(d)
        return d

    def fit_initial_posterior(self, d):
        print(f"\nFitting initial posterior ({self.cfg.prior})...")
        if self.cfg.prior == "horseshoe":
            draws = self._timed("initial_posterior", self.prior_model.posterior, d, self.cfg.seed)
            self.diagnostics['horseshoe'] = draws.diagnostics
        else:
            state, draws = self._timed("initial_posterior", self.prior_model.posterior,
                                       d, self.cfg.B, self.cfg.seed, self.workers)
            self.diagnostics['vb'] = {'converged': state.converged, 'sweeps': state.sweeps,
                                      'elbo': state.elbo_trace[-1], 'noise_variance': state.noise_variance}
            self.vb_state = state
        print(f"✓ {draws.B} draws of {draws.p} coefficients")
        return draws

    def estimate_precision(self, d):
        print(f"\nEstimating precision matrix ({self.precision_model.method})...")
        theta = self._timed("precision", self.precision_model.estimate, d)
        self.diagnostics['precision'] = theta.diagnostics()
        print(f"✓ ||Theta Omega - I||_max = {theta.constraint_norm:.3e} (bound {theta.bound():.3e})")
        return theta

    def run(self, resolved_args):
        d = self.load_dataset()
        raw = self.fit_initial_posterior(d)
        theta = self.estimate_precision(d)

        print("\nDebiasing posterior draws...")
        debiased = self._timed("debias", self.debiaser.debias, d, raw, theta, self.cfg.seed)
        summary = posterior_summary(raw, debiased, self.debiaser.alpha, d.column_names, d.to_original_scale)

        # nothing is written until every stage has succeeded
        outputs = self.write_outputs(d, raw, debiased, summary)
        manifest = {
            'command': 'analyze',
            'config': resolved_args,
            'analysis': asdict(self.cfg),
            'workers': self.workers,
            'seed': self.cfg.seed,
            'n': d.n,
            'p': d.p,
            'timings': self.timings,
            'diagnostics': self.diagnostics,
            'models': {
                'prior': self.prior_model.get_model_info(),
                'precision': self.precision_model.get_model_info(),
                'debias': self.debiaser.get_model_info(),
            },
            'versions': _versions(),
            'outputs': outputs,
        }
        _write_json(Path(self.cfg.output_path) / "manifest.json", manifest)
        self.display_summary(summary)
        return summary

    def write_outputs(self, d, raw, debiased, summary):
        out = _output_dir(self.cfg.output_path)
        written = []

        summary.to_csv(out / "intervals.csv", index=False)
        _write_json(out / "intervals.json", summary.to_dict(orient="records"))
        written += ["intervals.csv", "intervals.json"]

        if self.cfg.write_draws:
            names = list(d.column_names)
            pd.DataFrame(d.to_original_scale(raw.draws), columns=names).to_csv(out / "draws_raw.csv", index=False)
            pd.DataFrame(d.to_original_scale(debiased.draws), columns=names).to_csv(
                out / "draws_debiased.csv", index=False)
            written += ["draws_raw.csv", "draws_debiased.csv"]

        if self.cfg.prior == "spike_slab_vb":
            _write_json(out / "vb_state.json", self.vb_state.to_dict())
            written.append("vb_state.json")

        if d.standardized:
            write_standardization_sidecar(d, out / "standardization.json")
            written.append("standardization.json")

        if self.cfg.dashboard:
            from visualization.inference_dashboard import InferenceDashboard

            dashboard = InferenceDashboard(summary=summary, raw_draws=d.to_original_scale(raw.draws),
                                           debiased_draws=d.to_original_scale(debiased.draws))
            dashboard.save_dashboard(out / "dashboard.html", dashboard.create_posterior_dashboard())
            written.append("dashboard.html")

        return written

    def display_summary(self, summary):
        print("\n" + "=" * 60)
        print(f"DEBIASED POSTERIOR SUMMARY (level {self.cfg.level:.2f})")
        print("=" * 60)
        print(f"{'Coefficient':<14} {'Raw mean':<11} {'Raw interval':<24} {'Mean':<11} {'Interval':<24}")
        print("-" * 86)
        for _, r in summary.iterrows():
            raw_ci = f"[{r['raw_lower']:.4f}, {r['raw_upper']:.4f}]"
            ci = f"[{r['lower']:.4f}, {r['upper']:.4f}]"
            print(f"{r['name']:<14} {r['raw_mean']:<11.4f} {raw_ci:<24} {r['mean']:<11.4f} {ci:<24}")
        print(f"\nResults written to {self.cfg.output_path}/")


def _versions():
    return {'numpy': np.__version__, 'scipy': scipy.__version__, 'pandas': pd.__version__}


def _output_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out}: {e}") from e
    return out


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, default=float)


def cmd_analyze(args):
    cfg = AnalysisConfig(
        input_path=args.input, response_column=args.response_column, prior=args.prior,
        precision_method=args.precision, B=args.B, level=args.level, seed=args.seed,
        standardize=args.standardize, output_path=args.output, slab_lambda=args.slab_lambda,
        u=args.u, noise_variance=args.noise_variance, burn_in=args.burn_in,
        precision_scale=args.precision_scale, kappa=args.kappa, write_draws=args.write_draws,
        dashboard=args.dashboard,
    )
    DebiasedInferencePipeline(cfg, args.threads).run(_resolved(args))
    return 0


def _parse_methods(value):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return tuple(m.strip() for m in str(value).split(",") if m.strip())


def cmd_simulate(args):
    scn = SimulationScenario.from_id(args.scenario, args.n, args.p)
    formats = _parse_methods(args.format)
    unknown = [f for f in formats if f not in REPORT_FORMATS]
    if unknown or not formats:
        raise ConfigError(f"unknown report format(s) {unknown}; valid: {list(REPORT_FORMATS)}")
    start = time.perf_counter()
    tables = run_study(scn, args.reps, _parse_methods(args.methods), args.level, args.seed,
                       args.threads, args.draws, args.prior, show_progress=not args.quiet)
    logger.info("Study finished in %.1f s", time.perf_counter() - start)

    out = _output_dir(args.output)
    outputs = []
    for fmt in formats:
        name = f"report.{'dat' if fmt == 'plotdata' else fmt}"
        emit_report(tables, fmt, out / name)
        outputs.append(name)

    if args.dashboard:
        from visualization.inference_dashboard import InferenceDashboard

        dashboard = InferenceDashboard(tables=tables)
        dashboard.save_dashboard(out / "dashboard.html", dashboard.create_study_dashboard())
        outputs.append("dashboard.html")

    # no wall-clock entries: reruns with the same seed must be byte-identical
    _write_json(out / "manifest.json", {
        'command': 'simulate',
        'config': _resolved(args),
        'scenario': {'id': scn.id, 'n': scn.n, 'p': scn.p, 'precision_truth': scn.precision_truth,
                     'error_model': scn.error_model},
        'failures': tables[0].failures,
        'versions': _versions(),
        'outputs': outputs,
    })
    print_summary(scn, tables)
    return 0


def cmd_precision(args):
    processor = DataProcessor(args.input, args.response_column, args.standardize)
    d = processor.load_dataset()
    estimator = PrecisionEstimator(args.method, args.precision_scale, args.kappa, args.symmetrize, args.threads)
    theta = estimator.estimate(d)

    out = _output_dir(args.output)
    theta.to_frame(d.column_names).to_csv(out / "precision.csv")
    _write_json(out / "precision.json", theta.diagnostics())
    _write_json(out / "manifest.json", {
        'command': 'precision', 'config': _resolved(args), 'model': estimator.get_model_info(),
        'versions': _versions(), 'outputs': ["precision.csv", "precision.json"],
    })
    print(f"✓ {theta.method} precision estimate ({theta.p} x {theta.p}) written to {out}/precision.csv")
    print(f"  ||Theta Omega - I||_max = {theta.constraint_norm:.3e} (bound {theta.bound():.3e})")
    return 0


def weight_diagnostics(n, B, seed):
    """Bootstrap weight checks: simplex constraints and the Beta(1, n - 1) law of W_1"""
    W = weight_matrix(n, 0, B, seed)
    first = W[:, 0]
    result = {
        'n': n,
        'B': B,
        'seed': seed,
        'min_weight': float(W.min()),
        'max_sum_error': float(np.max(np.abs(W.sum(axis=1) - 1.0))),
        'w1_mean': float(first.mean()),
        'w1_variance': float(first.var(ddof=1)),
        'w1_mean_expected': 1.0 / n,
        'w1_variance_expected': (n - 1) / (n ** 2 * (n + 1)),
    }
    if n >= 2:
        ks = stats.kstest(first, stats.beta(1, n - 1).cdf)
        result['ks_statistic'] = float(ks.statistic)
        result['ks_pvalue'] = float(ks.pvalue)
    return result, W


def cmd_weights(args):
    if args.n < 1 or args.B < 1:
        raise ConfigError(f"weights needs n >= 1 and B >= 1, got n={args.n}, B={args.B}")
    result, W = weight_diagnostics(args.n, args.B, args.seed)

    out = _output_dir(args.output)
    outputs = ["weights.json"]
    _write_json(out / "weights.json", result)
    if args.write_weights:
        pd.DataFrame(W, columns=[f"w{i + 1}" for i in range(args.n)]).to_csv(out / "weights.csv", index=False)
        outputs.append("weights.csv")
    _write_json(out / "manifest.json", {'command': 'weights', 'config': _resolved(args),
                                        'versions': _versions(), 'outputs': outputs})

    print(f"Weights: n={args.n}, B={args.B}, min={result['min_weight']:.3e}, "
          f"max |sum - 1| = {result['max_sum_error']:.1e}")
    if 'ks_pvalue' in result:
        print(f"W_1 vs Beta(1, {args.n - 1}): KS = {result['ks_statistic']:.4f}, p = {result['ks_pvalue']:.4f}")
    return 0


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors (exit code 1)"""

    def error(self, message):
        raise ConfigError(message)


def _common_options():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file or a previous run manifest")
    common.add_argument("--output", default="results", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="worker count (default: DEBAYES_THREADS or the logical core count)")
    common.add_argument("--verbose", "-v", action="store_true")
    return common


def _data_options(parser):
    parser.add_argument("--input", help="CSV file, header row required")
    parser.add_argument("--response-column", default="0", help="response column label or index")
    parser.add_argument("--standardize", action="store_true",
                        help="center and scale covariates (response centered too)")
    parser.add_argument("--precision-scale", type=float, default=1.0)
    parser.add_argument("--kappa", type=float, default=None, help="CLIME constraint level")


def build_parser():
    parser = _Parser(prog="debayes", description="Debiased Bayesian inference for sparse linear regression")
    common = _common_options()
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    analyze = sub.add_parser("analyze", parents=[common], help="debiased posterior of a CSV dataset")
    _data_options(analyze)
    analyze.add_argument("--prior", default="spike_slab_vb", choices=PRIORS)
    analyze.add_argument("--precision", default="nodewise", choices=PRECISION_METHODS)
    analyze.add_argument("--B", type=int, default=8_000, help="number of posterior draws")
    analyze.add_argument("--level", type=float, default=0.95)
    analyze.add_argument("--slab-lambda", type=float, default=1.0)
    analyze.add_argument("--u", type=float, default=1.0)
    analyze.add_argument("--noise-variance", type=float, default=None,
                         help="known noise variance (default: LASSO plug-in)")
    analyze.add_argument("--burn-in", type=int, default=None, help="horseshoe burn-in (default: B)")
    analyze.add_argument("--write-draws", action="store_true")
    analyze.add_argument("--dashboard", action="store_true")
    analyze.set_defaults(handler=cmd_analyze)
    subparsers['analyze'] = analyze

    simulate = sub.add_parser("simulate", parents=[common], help="Monte Carlo coverage study")
    simulate.add_argument("--scenario", default="S1", help=f"one of {', '.join(SCENARIOS)}")
    simulate.add_argument("--n", type=int, default=100)
    simulate.add_argument("--p", type=int, default=50)
    simulate.add_argument("--reps", type=int, default=200)
    simulate.add_argument("--methods", default=",".join(METHODS), help="comma-separated subset")
    simulate.add_argument("--level", type=float, default=0.95)
    simulate.add_argument("--draws", type=int, default=8_000)
    simulate.add_argument("--prior", default="spike_slab_vb", choices=PRIORS)
    simulate.add_argument("--format", default="csv", help="comma-separated subset of csv,json,plotdata")
    simulate.add_argument("--dashboard", action="store_true")
    simulate.add_argument("--quiet", action="store_true", help="no progress bar")
    simulate.set_defaults(handler=cmd_simulate)
    subparsers['simulate'] = simulate

    precision = sub.add_parser("precision", parents=[common], help="standalone precision matrix export")
    _data_options(precision)
    precision.add_argument("--method", default="nodewise", choices=PRECISION_METHODS)
    precision.add_argument("--symmetrize", action="store_true", help="CLIME symmetrization")
    precision.set_defaults(handler=cmd_precision)
    subparsers['precision'] = precision

    weights = sub.add_parser("weights", parents=[common], help="Bayesian bootstrap weight diagnostics")
    weights.add_argument("--n", type=int, default=50)
    weights.add_argument("--B", type=int, default=20_000)
    weights.add_argument("--write-weights", action="store_true")
    weights.set_defaults(handler=cmd_weights)
    subparsers['weights'] = weights

    return parser, subparsers


def load_config_file(path):
    """Flat JSON object, or a run manifest whose 'config' key holds one"""
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if isinstance(payload, dict) and isinstance(payload.get("config"), dict):
        payload = payload["config"]
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def _resolved(args):
    return {k: v for k, v in vars(args).items() if k not in ("handler", "config")}


def parse_args(argv=None):
    """flags > config file > built-in defaults"""
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = load_config_file(args.config)
        values.pop("command", None)
        known = set(_resolved(args))
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s) for {args.command}: {unknown}")
        subparsers[args.command].set_defaults(**values)
        args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = default_workers()
    if args.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {args.threads}")
    return args


def main(argv=None):
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        with numerical_failures(args.command):
            return args.handler(args)
    except DebayesError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
