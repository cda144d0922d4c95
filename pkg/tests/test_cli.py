"""Unit tests for cli.py"""
import json
import os
import tempfile

import pandas as pd
import pytest

from sensortrust.cli import EXIT_CONFIG, EXIT_OK, build_parser, main
from sensortrust.detection import DetectorCalibration
from sensortrust.persistence import SensorTrustPersistence


@pytest.fixture
def workdir():
    with tempfile.TemporaryDirectory() as tmp:
        calibration = os.path.join(tmp, "calibration.json")
        SensorTrustPersistence.export(DetectorCalibration(tau=20.0, b=1.0), calibration)
        yield tmp, calibration


class TestParser:

    def test_command_required(self):
        """Running without a subcommand is a usage error."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_repeatable_method(self):
        """--method collects every occurrence."""
        args = build_parser().parse_args(["simulate", "--method", "normal", "--method", "lase-ad-s", "--seeds", "3"])
        assert args.method == ["normal", "lase-ad-s"]
        assert args.seeds == 3

    def test_tune_modes(self):
        """Only the known tuning modes parse."""
        assert build_parser().parse_args(["tune", "--mode", "benign"]).mode == "benign"
        with pytest.raises(SystemExit):
            build_parser().parse_args(["tune", "--mode", "bayesian"])


class TestSimulate:

    def test_writes_combined_runs(self, workdir, capsys):
        """Several methods share one runs.csv and summary."""
        tmp, calibration = workdir
        out = os.path.join(tmp, "out")
        code = main([
            "simulate", "--scenario", "NoAttack", "--method", "normal", "--method", "lase-ad-s",
            "--seeds", "2", "--horizon", "0.25", "--calibration", calibration, "--out", out,
        ])
        assert code == EXIT_OK
        runs = pd.read_csv(os.path.join(out, "runs.csv"))
        assert set(runs["method"]) == {"normal", "lase-ad-s"}
        assert len(runs) == 2 * 2 * 50
        with open(os.path.join(out, "summary.json")) as f:
            summary = json.load(f)
        assert len(summary["summaries"]) == 2
        assert "failure_rate" in capsys.readouterr().out

    def test_missing_calibration(self, workdir):
        """No calibration is a configuration error."""
        tmp, _ = workdir
        code = main(["simulate", "--seeds", "1", "--horizon", "0.25", "--calibration", os.path.join(tmp, "none.json")])
        assert code == EXIT_CONFIG

    def test_unknown_method(self, workdir):
        """Unknown selectors are configuration errors."""
        _, calibration = workdir
        assert main(["simulate", "--method", "ukf", "--seeds", "1", "--calibration", calibration]) == EXIT_CONFIG

    def test_scenario_file(self, workdir):
        """A scenario config file is accepted in place of a name."""
        tmp, calibration = workdir
        path = os.path.join(tmp, "scenario.json")
        SensorTrustPersistence.export(
            {"scenario": "stochastic", "method": "wolf-tmd", "horizon_s": 0.25, "calibration_path": calibration},
            path,
        )
        assert main(["simulate", "--scenario", path, "--seeds", "1"]) == EXIT_OK

    def test_malformed_scenario_file(self, workdir):
        """Unknown keys in a scenario file are configuration errors."""
        tmp, _ = workdir
        path = os.path.join(tmp, "scenario.json")
        SensorTrustPersistence.export({"scenaro": "NoAttack"}, path)
        assert main(["simulate", "--scenario", path]) == EXIT_CONFIG


class TestCalibrateAndTune:

    def test_calibrate_writes_file(self, workdir):
        """The calibration artifact is written and loadable."""
        tmp, _ = workdir
        path = os.path.join(tmp, "fresh.json")
        assert main(["calibrate", "--benign-seeds", "20", "--horizon", "0.25", "--out", path]) == EXIT_OK
        calibration = SensorTrustPersistence.load_calibration(path)
        assert (calibration.tau > 0).all()

    def test_tune_wolf_needs_method(self, workdir):
        """WoLF tuning without a variant is a configuration error."""
        _, calibration = workdir
        assert main(["tune", "--mode", "wolf", "--seeds", "1", "--calibration", calibration]) == EXIT_CONFIG


class TestPomdp:

    def test_reference_problem(self, capsys):
        """The reference problem satisfies dominance and writes both artifacts."""
        with tempfile.TemporaryDirectory() as tmp:
            assert main(["pomdp", "--out", tmp]) == EXIT_OK
            with open(os.path.join(tmp, "pomdp_report.json")) as f:
                report = json.load(f)
            grid = pd.read_csv(os.path.join(tmp, "pomdp_grid.csv"))
        assert report["dominance"]["violations"] == 0
        assert report["garbling"]["valid"] is True
        assert len(report["slope_table"]) == 5
        assert report["sup_norm_history"][-1] < 1e-10
        assert {"pi", "advantage", "V", "use_expensive", "myopic"}.issubset(grid.columns)
        assert len(grid) == 10_000
        printed = json.loads(capsys.readouterr().out)
        assert printed["violations"] == 0

    def test_ordering_violation(self):
        """A less informative expensive sensor is a configuration error."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "problem.json")
            SensorTrustPersistence.export({"sensor_e": {"alpha": 0.4, "tau": 0.95}, "grid_size": 1000}, path)
            assert main(["pomdp", "--config", path]) == EXIT_CONFIG

    def test_unknown_problem_key(self):
        """Typos in problem files are configuration errors."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "problem.json")
            SensorTrustPersistence.export({"lamda": 0.1}, path)
            assert main(["pomdp", "--config", path]) == EXIT_CONFIG
