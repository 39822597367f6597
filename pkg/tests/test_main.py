import json

import numpy as np
import pandas as pd
import pytest

from data_processor import Dataset, export_csv
from main import main, parse_args
from models.precision_model import PrecisionEstimator
from simulation.scenarios import SimulationScenario, generate
from utils.errors import ConfigError
from utils.parallel import THREADS_ENV, default_workers


@pytest.fixture
def s1_csv(tmp_path):
    d = generate(SimulationScenario.from_id("S1", n=100, p=50), seed=31)
    return export_csv(d, tmp_path / "s1.csv")


@pytest.fixture
def small_csv(tmp_path, small_dataset):
    return export_csv(small_dataset, tmp_path / "small.csv")


class TestAnalyze:
    def test_s1_intervals(self, s1_csv, tmp_path):
        out = tmp_path / "out"
        code = main(["analyze", "--input", str(s1_csv), "--output", str(out), "--B", "2000",
                     "--seed", "1", "--threads", "1"])
        assert code == 0
        frame = pd.read_csv(out / "intervals.csv")
        assert list(frame["name"][:5]) == ["x1", "x2", "x3", "x4", "x5"]
        strongest = frame.iloc[4]
        assert strongest["lower"] > 0.0
        zeros = frame.iloc[5:]
        assert ((zeros["raw_lower"] == 0.0) & (zeros["raw_upper"] == 0.0)).any()

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["B"] == 2000
        assert manifest["seed"] == 1
        assert set(manifest["timings"]) >= {"load", "initial_posterior", "precision", "debias"}
        assert "intervals.csv" in manifest["outputs"]
        assert (out / "vb_state.json").exists()

    def test_manifest_reproduces_run(self, small_csv, tmp_path):
        out = tmp_path / "first"
        assert main(["analyze", "--input", str(small_csv), "--output", str(out), "--B", "300",
                     "--seed", "4", "--write-draws"]) == 0
        again = tmp_path / "again"
        assert main(["analyze", "--config", str(out / "manifest.json"), "--output", str(again)]) == 0
        for name in ("intervals.csv", "draws_raw.csv", "draws_debiased.csv"):
            assert (out / name).read_bytes() == (again / name).read_bytes()

    def test_missing_input_writes_nothing(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["analyze", "--input", str(tmp_path / "absent.csv"), "--output", str(out)])
        assert code == 2
        assert not out.exists()
        err = capsys.readouterr().err.strip()
        assert err.startswith("error:") and len(err.splitlines()) == 1

    def test_too_few_draws(self, small_csv, tmp_path):
        assert main(["analyze", "--input", str(small_csv), "--output", str(tmp_path / "o"), "--B", "10"]) == 1

    def test_direct_precision_and_standardize(self, small_csv, tmp_path):
        out = tmp_path / "out"
        code = main(["analyze", "--input", str(small_csv), "--output", str(out), "--B", "200",
                     "--precision", "direct", "--standardize", "--dashboard"])
        assert code == 0
        constants = json.loads((out / "standardization.json").read_text())
        assert len(constants["scale"]) == 5
        assert (out / "dashboard.html").exists()

    def test_horseshoe_prior(self, small_csv, tmp_path):
        out = tmp_path / "out"
        code = main(["analyze", "--input", str(small_csv), "--output", str(out), "--B", "200",
                     "--prior", "horseshoe", "--burn-in", "200"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert "horseshoe" in manifest["diagnostics"]

    def test_singular_direct_inverse_is_numerical_error(self, tmp_path, rng):
        X = rng.standard_normal((8, 10))
        path = export_csv(Dataset(X, rng.standard_normal(8)), tmp_path / "wide.csv")
        code = main(["analyze", "--input", str(path), "--output", str(tmp_path / "o"), "--B", "100",
                     "--precision", "direct"])
        assert code == 3


class TestSimulate:
    ARGS = ["--scenario", "S1", "--n", "60", "--p", "10", "--reps", "3", "--seed", "7", "--draws", "200", "--quiet"]

    def test_deterministic_across_runs_and_threads(self, tmp_path):
        reports = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "2")):
            out = tmp_path / name
            assert main(["simulate", *self.ARGS, "--output", str(out), "--threads", threads,
                         "--format", "csv,plotdata"]) == 0
            reports.append(((out / "report.csv").read_bytes(), (out / "report.dat").read_bytes()))
        assert reports[0] == reports[1] == reports[2]

    def test_unknown_scenario(self, tmp_path, capsys):
        code = main(["simulate", "--scenario", "S7", "--output", str(tmp_path / "o")])
        assert code == 1
        assert "S1, S2, S3, S4, S5, S6" in capsys.readouterr().err

    def test_method_filter(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["simulate", *self.ARGS, "--output", str(out), "--threads", "1",
                     "--methods", "debiased_bayes", "--dashboard"]) == 0
        report = pd.read_csv(out / "report.csv")
        assert set(report["method"]) == {"debiased_bayes"}
        assert len(report) == 6
        assert (out / "dashboard.html").exists()
        assert "SIMULATION SUMMARY" in capsys.readouterr().out


class TestStandaloneCommands:
    @pytest.mark.parametrize("exc", [np.linalg.LinAlgError("Singular matrix"), ValueError("array must not contain infs")])
    def test_library_numeric_exception_exits_3(self, small_csv, tmp_path, capsys, monkeypatch, exc):
        def fail(self, d):
            raise exc

        monkeypatch.setattr(PrecisionEstimator, "estimate", fail)
        code = main(["precision", "--input", str(small_csv), "--output", str(tmp_path / "o")])
        assert code == 3
        err = capsys.readouterr().err.strip()
        assert err.startswith("error: precision:") and type(exc).__name__ in err
        assert len(err.splitlines()) == 1

    def test_precision_export(self, small_csv, tmp_path):
        out = tmp_path / "out"
        assert main(["precision", "--input", str(small_csv), "--output", str(out), "--method", "clime"]) == 0
        theta = pd.read_csv(out / "precision.csv", index_col=0)
        assert theta.shape == (5, 5)
        assert json.loads((out / "precision.json").read_text())["method"] == "clime"

    def test_weights_diagnostics(self, tmp_path):
        out = tmp_path / "out"
        assert main(["weights", "--n", "50", "--B", "5000", "--seed", "3", "--output", str(out),
                     "--write-weights"]) == 0
        result = json.loads((out / "weights.json").read_text())
        assert result["max_sum_error"] <= 1e-12
        assert result["ks_pvalue"] > 1e-4
        assert result["w1_mean"] == pytest.approx(1.0 / 50, rel=0.05)
        assert pd.read_csv(out / "weights.csv").shape == (5000, 50)


class TestConfiguration:
    def test_flags_override_config_file(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"B": 500, "level": 0.9, "prior": "horseshoe"}))
        args = parse_args(["analyze", "--config", str(config), "--B", "300"])
        assert args.B == 300
        assert args.level == 0.9
        assert args.prior == "horseshoe"
        assert parse_args(["analyze"]).B == 8_000

    def test_manifest_config_key(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"command": "simulate", "config": {"reps": 12, "scenario": "S3"}}))
        args = parse_args(["simulate", "--config", str(manifest)])
        assert (args.reps, args.scenario) == (12, "S3")

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(ConfigError, match="bogus"):
            parse_args(["analyze", "--config", str(config)])

    def test_bad_flag_is_config_error(self):
        assert main(["analyze", "--level", "high"]) == 1

    def test_thread_env_override(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert default_workers() == 3
        assert parse_args(["weights"]).threads == 3
        assert parse_args(["weights", "--threads", "2"]).threads == 2


def test_s1_dataset_round_trip(s1_csv):
    frame = pd.read_csv(s1_csv)
    assert frame.shape == (100, 51)
    assert np.isfinite(frame.to_numpy()).all()
