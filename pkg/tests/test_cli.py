"""End-to-end tests for the command-line interface."""

import json
import subprocess
import sys

import numpy as np
import pytest

from quantbreak import __version__, cli
from quantbreak.cli import (
    DataError,
    DatasetSpec,
    UsageError,
    load_csv,
    run_analysis,
    tabulate,
)
from quantbreak.mcharness import parse_report
from quantbreak.qrsolve import ConvergenceError

SIM = ["--sim-grid-steps", "1000", "--sim-reps", "10000"]
SIM_KW = {"sim_grid_steps": 1000, "sim_reps": 10_000}


@pytest.fixture(scope="module")
def cache_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("cli_cache"))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli_data")


@pytest.fixture(scope="module")
def null_csv(data_dir):
    # zero-slope two-predictor null; seed chosen so no test rejects at 5%
    path = data_dir / "null.csv"
    rc = cli.main(
        [
            "gen", "--n", "400", "--theta1", "1,0,0", "--c=-2,-5",
            "--gamma-x", "0.75", "--rho=-0.5,-0.5", "--seed", "11",
            "--out", str(path),
        ]
    )
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def break_csv(data_dir):
    # slope 0 -> 1 at mid-sample; seed chosen so SW-IVZ rejects with
    # lambda_hat close to 0.5
    path = data_dir / "break.csv"
    rc = cli.main(
        [
            "gen", "--n", "500", "--theta1", "1,0", "--theta2", "1,1",
            "--lambda0", "0.5", "--c=-2", "--gamma-x", "0.75", "--rho=-0.5",
            "--seed", "23", "--out", str(path),
        ]
    )
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def null_report(null_csv, data_dir, cache_dir):
    out = data_dir / "null_report.json"
    paths = data_dir / "null_paths.csv"
    rc = cli.main(
        [
            "analyze", "--data", str(null_csv), "--response", "y",
            "--predictors", "x1,x2", "--tests", "SQ-IVZ,SW-IVZ",
            "--tau", "0.5", "--persistence", "mi", "--cache-dir", cache_dir,
            "--out", str(out), "--paths-out", str(paths),
        ]
        + SIM
    )
    assert rc == 0
    return json.loads(out.read_text()), paths


class TestGen:
    def test_same_seed_same_bytes(self, data_dir):
        a, b = data_dir / "gen_a.csv", data_dir / "gen_b.csv"
        argv = ["gen", "--n", "50", "--theta1", "1,0.5", "--seed", "3"]
        assert cli.main(argv + ["--out", str(a)]) == 0
        assert cli.main(argv + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        c = data_dir / "gen_c.csv"
        assert cli.main(argv[:-1] + ["4", "--out", str(c)]) == 0
        assert a.read_bytes() != c.read_bytes()

    def test_header_and_shape(self, null_csv):
        lines = null_csv.read_text().splitlines()
        assert lines[0] == "t,y,x1,x2"
        assert len(lines) == 401

    def test_break_switches_regime_at_floor(self, data_dir):
        # an enormous intercept jump marks the regime of every row
        path = data_dir / "gen_jump.csv"
        rc = cli.main(
            [
                "gen", "--n", "101", "--theta1", "0,0", "--theta2", "1000,0",
                "--lambda0", "0.5", "--seed", "5", "--out", str(path),
            ]
        )
        assert rc == 0
        rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
        y = np.array([float(r[1]) for r in rows])
        # k = floor(0.5 * 101) = 50: rows 1..50 regime one, 51.. regime two
        assert np.max(np.abs(y[:50])) < 500
        assert np.min(y[50:]) > 500

    def test_rejects_intercept_only(self):
        assert cli.main(["gen", "--n", "50", "--theta1", "1", "--out", "x"]) == 1

    def test_rejects_bad_lambda0(self, data_dir):
        rc = cli.main(
            [
                "gen", "--n", "50", "--theta1", "1,0", "--theta2", "1,1",
                "--lambda0", "1.5", "--out", str(data_dir / "bad.csv"),
            ]
        )
        assert rc == 1


class TestLoadCsv:
    def _write(self, tmp_path, text):
        path = tmp_path / "d.csv"
        path.write_text(text)
        return path

    def _long(self, tmp_path, rows=40):
        lines = ["y,x1"] + ["%d,%d" % (t, 10 * t) for t in range(1, rows + 1)]
        return self._write(tmp_path, "\n".join(lines) + "\n")

    def test_lag_alignment(self, tmp_path):
        path = self._long(tmp_path)
        sample, info = load_csv(DatasetSpec(str(path), "y", ("x1",), lag=2))
        assert info["n"] == sample.n == 38
        assert info["rows_dropped"] == 0
        # y_t pairs with x_{t-2}: first kept response is y=3, lagged x=10
        np.testing.assert_allclose(sample.y[:3], [3.0, 4.0, 5.0])
        np.testing.assert_allclose(sample.x_lagged[:3, 0], [10.0, 20.0, 30.0])

    def test_missing_column(self, tmp_path):
        path = self._long(tmp_path)
        with pytest.raises(DataError, match="column 'x9'"):
            load_csv(DatasetSpec(str(path), "y", ("x9",)))

    def test_non_numeric_cell(self, tmp_path):
        path = self._write(tmp_path, "y,x1\n1,2\n3,oops\n" + "5,6\n" * 40)
        with pytest.raises(DataError, match="row 3"):
            load_csv(DatasetSpec(str(path), "y", ("x1",)))

    def test_na_rows_dropped_and_counted(self, tmp_path):
        lines = ["y,x1"]
        for t in range(1, 41):
            lines.append("%d,%d" % (t, 10 * t) if t % 10 else "NA,%d" % (10 * t))
        path = self._write(tmp_path, "\n".join(lines) + "\n")
        sample, info = load_csv(DatasetSpec(str(path), "y", ("x1",)))
        assert info["rows_dropped"] == 4
        assert sample.n == 36 - 1

    def test_too_few_rows(self, tmp_path):
        path = self._write(tmp_path, "y,x1\n" + "1,2\n" * 12)
        with pytest.raises(DataError, match="aligned rows"):
            load_csv(DatasetSpec(str(path), "y", ("x1",)))

    def test_date_column_not_parsed(self, tmp_path):
        lines = ["date,y,x1"] + [
            "2020-01-%02d,%d,%d" % (t % 28 + 1, t, 10 * t) for t in range(1, 41)
        ]
        path = self._write(tmp_path, "\n".join(lines) + "\n")
        spec = DatasetSpec(str(path), "y", ("x1",), date_column="date")
        sample, info = load_csv(spec)
        assert sample.n == 39

    def test_missing_file(self):
        with pytest.raises(DataError, match="cannot read"):
            load_csv(DatasetSpec("/no/such/file.csv", "y", ("x1",)))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            DatasetSpec("f.csv", "y", ())
        with pytest.raises(ValueError):
            DatasetSpec("f.csv", "y", ("x1",), lag=0)


class TestAnalyze:
    def test_report_shape(self, null_report):
        report, _ = null_report
        assert report["schema_version"] == 1
        assert report["package_version"] == __version__
        assert report["dataset"]["n"] == 399
        assert report["settings"]["tests"] == ["SQ-IVZ", "SW-IVZ"]
        (section,) = report["per_tau"]
        assert section["tau"] == 0.5
        assert len(section["fits"]["ols"]["theta"]) == 3
        assert len(section["fits"]["ivz"]["beta"]) == 2
        for label in ("ivx", "ivz"):
            assert section["predictability"][label]["df"] == 2
        for bt in section["break_tests"]:
            assert len(bt["fractions"]) == len(bt["path"])
            assert bt["statistic"] == pytest.approx(max(bt["path"]))

    def test_null_fixture_accepts(self, null_report):
        report, _ = null_report
        for bt in report["per_tau"][0]["break_tests"]:
            assert bt["decision"]["0.95"] is False
            assert bt["decision"]["0.99"] is False

    def test_paths_csv(self, null_report):
        report, paths = null_report
        lines = paths.read_text().splitlines()
        assert lines[0] == "tau,test,lambda,value"
        expected = sum(
            len(bt["path"]) for bt in report["per_tau"][0]["break_tests"]
        )
        assert len(lines) == 1 + expected
        assert {line.split(",")[1] for line in lines[1:]} == {"SQ-IVZ", "SW-IVZ"}

    def test_break_fixture_rejects(self, break_csv, data_dir, cache_dir):
        out = data_dir / "break_report.json"
        rc = cli.main(
            [
                "analyze", "--data", str(break_csv), "--response", "y",
                "--predictors", "x1", "--tests", "SW-IVZ", "--tau", "0.5",
                "--persistence", "mi", "--cache-dir", cache_dir,
                "--out", str(out),
            ]
            + SIM
        )
        assert rc == 0
        bt = json.loads(out.read_text())["per_tau"][0]["break_tests"][0]
        assert bt["decision"]["0.95"] is True
        assert 0.4 <= bt["lambda_hat"] <= 0.6

    def test_predictability_detects_slope(self, data_dir, cache_dir):
        path = data_dir / "slope.csv"
        assert (
            cli.main(
                [
                    "gen", "--n", "400", "--theta1", "1,1", "--c=-2",
                    "--gamma-x", "0.75", "--seed", "9", "--out", str(path),
                ]
            )
            == 0
        )
        report = run_analysis(
            DatasetSpec(str(path), "y", ("x1",)),
            tests=("SQ-IVZ",),
            taus=(0.5,),
            persistence="mi",
            cache_dir=cache_dir,
            **SIM_KW,
        )
        for label in ("ivx", "ivz"):
            assert report["per_tau"][0]["predictability"][label]["p_value"] < 0.01

    def test_stdout_json(self, null_csv, cache_dir, capsys):
        rc = cli.main(
            [
                "analyze", "--data", str(null_csv), "--response", "y",
                "--predictors", "x1,x2", "--tests", "SQ-IVZ", "--tau", "0.5",
                "--persistence", "mi", "--cache-dir", cache_dir,
            ]
            + SIM
        )
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["schema_version"] == 1

    def test_config_file_with_flag_override(self, null_csv, data_dir, cache_dir, capsys):
        cfg = data_dir / "analyze_cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "data": str(null_csv),
                    "response": "y",
                    "predictors": "x1,x2",
                    "tests": "SQ-IVZ",
                    "tau": "0.5",
                    "persistence": "mi",
                    "cache-dir": cache_dir,
                    "sim-grid-steps": 1000,
                    "sim-reps": 10000,
                }
            )
        )
        rc = cli.main(["analyze", "--config", str(cfg), "--tau", "0.25"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["settings"]["taus"] == [0.25]
        assert report["settings"]["tests"] == ["SQ-IVZ"]

    def test_usage_errors(self, null_csv):
        assert cli.main(["analyze"]) == 1
        assert (
            cli.main(
                [
                    "analyze", "--data", str(null_csv), "--response", "y",
                    "--predictors", "x1", "--tests", "SQ-BAD",
                ]
            )
            == 1
        )

    def test_data_error_exit_code(self):
        rc = cli.main(
            ["analyze", "--data", "/no/file.csv", "--response", "y",
             "--predictors", "x1"]
        )
        assert rc == 2

    def test_numerical_failure_exit_code(self, null_csv, cache_dir, monkeypatch):
        def blow_up(*args, **kwargs):
            raise ConvergenceError("forced")

        monkeypatch.setattr(cli, "sq_test", blow_up)
        rc = cli.main(
            [
                "analyze", "--data", str(null_csv), "--response", "y",
                "--predictors", "x1,x2", "--tests", "SQ-IVZ", "--tau", "0.5",
                "--persistence", "mi", "--cache-dir", cache_dir,
            ]
            + SIM
        )
        assert rc == 3

    def test_custom_instrument_config(self, null_csv, cache_dir, capsys):
        rc = cli.main(
            [
                "analyze", "--data", str(null_csv), "--response", "y",
                "--predictors", "x1,x2", "--tests", "SQ-IVZ", "--tau", "0.5",
                "--persistence", "mi", "--cache-dir", cache_dir,
                "--c-z=-0.5,-0.5", "--gamma-z", "0.9",
            ]
            + SIM
        )
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["settings"]["ivx"] == {"c_z": [-0.5, -0.5], "gamma_z": 0.9}


class TestSimulate:
    BASE = [
        "simulate", "--theta1", "1,0", "--n-list", "150", "--c-list=-1",
        "--gamma-x-list", "0.75", "--tau-list", "0.5", "--tests", "SQ-IVZ",
        "--reps", "8",
    ] + SIM

    def test_csv_stdout(self, cache_dir, capsys):
        rc = cli.main(self.BASE + ["--cache-dir", cache_dir])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("n,c,gamma_x,tau,test,")
        assert len(lines) == 2
        rate = float(lines[1].split(",")[5])
        assert 0.0 <= rate <= 1.0

    def test_json_report_round_trip(self, data_dir, cache_dir):
        out = data_dir / "sim_report.json"
        rc = cli.main(
            self.BASE
            + ["--cache-dir", cache_dir, "--format", "json", "--out", str(out)]
        )
        assert rc == 0
        report = parse_report(out.read_text())
        assert report.config.reps == 8
        assert report.config.scenario.lambda0 is None

    def test_report_reruns_itself(self, data_dir, cache_dir, capsys):
        out = data_dir / "rerun_report.json"
        assert (
            cli.main(
                self.BASE
                + ["--cache-dir", cache_dir, "--format", "json", "--out", str(out)]
            )
            == 0
        )
        rc = cli.main(
            [
                "simulate", "--config", str(out), "--cache-dir", cache_dir,
                "--format", "json",
            ]
        )
        assert rc == 0
        assert capsys.readouterr().out == out.read_text()

    def test_power_run_inferred_from_lambda0(self, cache_dir, capsys):
        rc = cli.main(
            [
                "simulate", "--theta1", "1,0", "--theta2", "1,1",
                "--lambda0", "0.5", "--n-list", "150", "--c-list=-1",
                "--gamma-x-list", "0.75", "--tau-list", "0.5",
                "--tests", "SQ-IVZ", "--reps", "8", "--cache-dir", cache_dir,
                "--format", "json",
            ]
            + SIM
        )
        assert rc == 0
        report = parse_report(capsys.readouterr().out)
        assert report.config.scenario.lambda0 == 0.5
        (cell,) = report.cells.values()
        assert cell.mean_lambda_hat is not None

    def test_innovation_preset_flag(self, cache_dir, capsys):
        rc = cli.main(
            self.BASE + ["--cache-dir", cache_dir, "--innovation", "exogenous"]
        )
        assert rc == 0
        assert capsys.readouterr().out.count("\n") == 2

    def test_missing_required_lists(self):
        assert cli.main(["simulate", "--theta1", "1,0"]) == 1

    def test_bad_test_name(self):
        rc = cli.main(
            ["simulate", "--theta1", "1,0", "--n-list", "100",
             "--tests", "NOPE-IVZ", "--tau-list", "0.5"]
        )
        assert rc == 1


class TestTabulate:
    ARGS = [
        "tabulate", "--family", "BB_SUP_INF_NORM", "--p", "1", "--eta", "0.15",
        "--reps", "10000", "--grid-steps", "1000",
    ]

    def test_creates_cache_file(self, tmp_path, capsys):
        rc = cli.main(self.ARGS + ["--cache-dir", str(tmp_path)])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["path"].startswith(str(tmp_path))
        assert set(payload["quantiles"]) == {"0.9", "0.95", "0.99"}
        assert (tmp_path / payload["path"].rsplit("/", 1)[1]).exists()

    def test_second_call_reuses_cache(self, tmp_path, capsys):
        assert cli.main(self.ARGS + ["--cache-dir", str(tmp_path)]) == 0
        first = capsys.readouterr().out
        assert cli.main(self.ARGS + ["--cache-dir", str(tmp_path)]) == 0
        assert capsys.readouterr().out == first

    def test_corrupted_cache_recomputed(self, tmp_path):
        path, table = tabulate(
            "BB_SUP_INF_NORM", 1, 0.15, reps=10_000, grid_steps=1000,
            cache_dir=str(tmp_path),
        )
        with open(path, "w") as fh:
            fh.write("{ not json")
        with pytest.warns(UserWarning, match="corrupted cache"):
            path2, table2 = tabulate(
                "BB_SUP_INF_NORM", 1, 0.15, reps=10_000, grid_steps=1000,
                cache_dir=str(tmp_path),
            )
        assert path2 == path
        assert table2.quantiles == table.quantiles

    def test_unknown_family(self, tmp_path):
        rc = cli.main(
            ["tabulate", "--family", "NOPE", "--p", "1", "--eta", "0.15",
             "--cache-dir", str(tmp_path)]
        )
        assert rc == 1

    def test_required_parameters_by_family(self, tmp_path):
        assert cli.main(["tabulate", "--family", "BB_SUP_INF_NORM", "--p", "1",
                         "--cache-dir", str(tmp_path)]) == 1
        assert cli.main(["tabulate", "--family", "OU_WALD_LUR", "--p", "1",
                         "--eta", "0.15", "--cache-dir", str(tmp_path)]) == 1

    def test_chi_square_is_analytic(self, tmp_path, capsys):
        rc = cli.main(
            ["tabulate", "--family", "CHI_SQUARE", "--p", "3",
             "--cache-dir", str(tmp_path)]
        )
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["quantiles"]["0.95"] == pytest.approx(7.8147, abs=1e-3)


class TestConsoleScript:
    def test_version(self):
        out = subprocess.run(
            [sys.executable, "-m", "quantbreak.cli", "--version"],
            capture_output=True, text=True,
        )
        assert out.returncode == 0
        assert out.stdout.strip() == __version__
