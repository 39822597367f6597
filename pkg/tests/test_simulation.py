import json

import numpy as np
import pytest

from simulation.scenarios import SimulationScenario, generate, precision_matrix, sample_design, sample_errors
from simulation.study import MetricsTable, aggregate, emit_report, run_study
from utils.errors import ConfigError, NumericalError
from utils.random_streams import stream


class TestScenarios:
    def test_mapping(self):
        expected = {
            'S1': ("diagonal_1_to_p", "gauss_unit"),
            'S2': ("diagonal_1_to_p", "chi2_centered"),
            'S3': ("diagonal_1_to_p", "hetero_abs_x1"),
            'S4': ("banded_half", "gauss_unit"),
            'S5': ("banded_half", "chi2_centered"),
            'S6': ("banded_half", "hetero_abs_x1"),
        }
        for scenario_id, (truth, errors) in expected.items():
            scn = SimulationScenario.from_id(scenario_id, p=20)
            assert (scn.precision_truth, scn.error_model) == (truth, errors)
            assert scn.beta0.support_size == 5

    def test_true_coefficients(self):
        scn = SimulationScenario.from_id("S1", p=8)
        np.testing.assert_array_equal(scn.beta0.values, [0.25, 0.5, 0.75, 1.0, 2.0, 0.0, 0.0, 0.0])

    def test_unknown_scenario_lists_valid_names(self):
        with pytest.raises(ConfigError, match="S1, S2, S3, S4, S5, S6"):
            SimulationScenario.from_id("S9")

    def test_groups(self):
        groups = SimulationScenario.from_id("S1", p=10).groups
        assert sorted(groups) == [0, 1, 2, 3, 4, 5]
        np.testing.assert_array_equal(groups[0], np.arange(5, 10))
        assert [int(groups[g][0]) for g in range(1, 6)] == [0, 1, 2, 3, 4]

    def test_diagonal_covariance(self):
        scn = SimulationScenario.from_id("S1", p=5)
        X = sample_design(scn, stream(1), n=50_000)
        np.testing.assert_allclose(np.diag(np.cov(X.T)), 1.0 / np.arange(1, 6), rtol=0.02)

    def test_banded_precision(self):
        scn = SimulationScenario.from_id("S4", p=5)
        X = sample_design(scn, stream(2), n=100_000)
        sample_precision = np.linalg.inv(np.cov(X.T))
        assert sample_precision[0, 1] == pytest.approx(0.5, abs=0.05)
        np.testing.assert_allclose(sample_precision, precision_matrix(scn), atol=0.06)

    def test_chi_square_errors(self):
        scn = SimulationScenario.from_id("S2", p=5)
        eps = sample_errors(scn, stream(3), np.zeros((50_000, 5)))
        assert eps.mean() == pytest.approx(0.0, abs=0.05)
        assert eps.var() == pytest.approx(6.0, abs=0.3)

    def test_heteroskedastic_errors(self):
        scn = SimulationScenario.from_id("S3", p=5)
        rng = stream(4)
        X = sample_design(scn, rng, n=50_000)
        eps = sample_errors(scn, rng, X)
        large = np.abs(X[:, 0]) > 1.5
        assert eps[large].std() > 2.0 * eps[np.abs(X[:, 0]) < 0.2].std()

    def test_generate_is_reproducible(self):
        scn = SimulationScenario.from_id("S5", n=50, p=10)
        a, b = generate(scn, 7, replication=3), generate(scn, 7, replication=3)
        assert np.array_equal(a.design, b.design) and np.array_equal(a.response, b.response)
        assert not np.array_equal(a.design, generate(scn, 7, replication=4).design)


def _table(method="debiased_bayes", coverage=0.9):
    return MetricsTable({g: (coverage, 0.01 * g, 0.1 + 0.01 * g) for g in range(6)}, method, 10, 0.95)


class TestAggregate:
    def test_rmse_dominates_bias(self):
        scn = SimulationScenario.from_id("S1", p=8)
        rng = np.random.default_rng(0)
        results = []
        for _ in range(30):
            est = scn.beta0.values + 0.3 * rng.standard_normal(8) + 0.1
            results.append((est, np.column_stack([est - 0.5, est + 0.5])))
        table = aggregate(scn, "bayes", results, 0.95)
        for coverage, bias, rmse in table.per_group.values():
            assert 0.0 <= coverage <= 1.0
            assert rmse >= abs(bias)

    def test_coverage_validated(self):
        with pytest.raises(NumericalError):
            MetricsTable({0: (1.5, 0.0, 0.0)}, "bayes", 1, 0.95)


class TestRunStudy:
    def test_single_replication_coverage_is_binary(self):
        scn = SimulationScenario.from_id("S2", n=60, p=10)
        tables = run_study(scn, replications=1, level=0.95, seed=3, draws=300)
        assert [t.method for t in tables] == ["bayes", "debiased_bayes", "debiased_lasso"]
        for table in tables:
            for group in range(1, 6):
                assert table.per_group[group][0] in (0.0, 1.0)

    def test_method_filter(self):
        scn = SimulationScenario.from_id("S1", n=60, p=10)
        tables = run_study(scn, replications=2, methods=["debiased_lasso"], seed=1)
        assert [t.method for t in tables] == ["debiased_lasso"]

    def test_invariant_to_parallelism(self):
        scn = SimulationScenario.from_id("S4", n=60, p=10)
        serial = run_study(scn, replications=4, seed=5, draws=200, parallelism=1)
        parallel = run_study(scn, replications=4, seed=5, draws=200, parallelism=2)
        assert [t.per_group for t in serial] == [t.per_group for t in parallel]

    def test_numeric_exception_counts_as_failed_replication(self, monkeypatch):
        def flaky(scn, seed, replication=0):
            if replication == 3:
                raise ValueError("f(a) and f(b) must have different signs")
            return generate(scn, seed, replication)

        monkeypatch.setattr("simulation.study.generate", flaky)
        scn = SimulationScenario.from_id("S1", n=60, p=10)
        tables = run_study(scn, replications=40, methods=["debiased_lasso"], seed=2, parallelism=1)
        assert tables[0].failures == 1
        assert tables[0].replications == 39

    def test_numeric_exceptions_everywhere_abort(self, monkeypatch):
        def broken(scn, seed, replication=0):
            raise np.linalg.LinAlgError("Singular matrix")

        monkeypatch.setattr("simulation.study.generate", broken)
        scn = SimulationScenario.from_id("S1", n=60, p=10)
        with pytest.raises(NumericalError, match="LinAlgError"):
            run_study(scn, replications=3, methods=["debiased_lasso"], parallelism=1)

    def test_invalid_config(self):
        scn = SimulationScenario.from_id("S1", n=60, p=10)
        with pytest.raises(ConfigError):
            run_study(scn, replications=0)
        with pytest.raises(ConfigError):
            run_study(scn, replications=1, methods=["bootstrap"])


class TestEmitReport:
    def test_csv(self, tmp_path):
        path = emit_report([_table()], "csv", tmp_path / "report.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "method,group,coverage,bias,rmse,replications,level"
        assert len(lines) == 7

    def test_json(self, tmp_path):
        path = emit_report([_table(), _table("bayes")], "json", tmp_path / "report.json")
        records = json.loads(path.read_text())
        assert len(records) == 12
        assert records[0]['method'] == "debiased_bayes"

    def test_plotdata_blocks(self, tmp_path):
        tables = [_table("bayes"), _table("debiased_bayes"), _table("debiased_lasso")]
        text = emit_report(tables, "plotdata", tmp_path / "report.dat").read_text()
        blocks = text.strip().split("\n\n")
        assert len(blocks) == 3
        for block in blocks:
            rows = [line for line in block.splitlines() if not line.startswith("#")]
            assert len(rows) == 6
            assert all(len(row.split()) == 4 for row in rows)

    def test_empty_input(self, tmp_path):
        with pytest.raises(ConfigError):
            emit_report([], "csv", tmp_path / "report.csv")

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(ConfigError):
            emit_report([_table()], "csv", tmp_path / "missing" / "dir" / "report.csv")


@pytest.mark.slow
class TestCoverageReplication:
    def test_debiased_bayes_and_lasso_cover(self):
        scn = SimulationScenario.from_id("S1", n=100, p=50)
        tables = {t.method: t for t in run_study(scn, replications=200, seed=2024, draws=2_000, parallelism=4)}
        debiased = tables["debiased_bayes"].per_group
        assert 0.895 <= debiased[5][0] <= 0.995
        assert 0.91 <= debiased[0][0] <= 0.99
        assert 0.90 <= tables["debiased_lasso"].per_group[0][0] <= 0.99

    def test_standard_bayes_undercovers(self):
        scn = SimulationScenario.from_id("S1", n=100, p=100)
        tables = run_study(scn, replications=200, methods=["bayes"], seed=2024, draws=2_000, parallelism=4)
        assert tables[0].per_group[1][0] < 0.75
