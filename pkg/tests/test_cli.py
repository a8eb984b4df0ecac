"""
Tests for the command line interface
"""

import json

import pandas as pd
import pytest
from click.testing import CliRunner

from mechsqueeze.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, exit_code_for, main
from mechsqueeze.errors import (ConfigError, DataFileError, LengthError, ManifestError,
                                StageError)
from tests.conftest import TABLE1_FILE


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def trajectory_csv(runner, tmp_path):
    result = runner.invoke(main, ["--out-dir", str(tmp_path), "--seed", "3", "simulate",
                                  "--params", str(TABLE1_FILE), "--duration", "1",
                                  "--sample-rate", "10000"])
    assert result.exit_code == 0, result.output
    return tmp_path / "simulate" / "trajectory.csv"


class TestExitCodes:

    def test_mapping(self):
        assert exit_code_for(ConfigError("x")) == EXIT_CONFIG
        assert exit_code_for(LengthError("x")) == EXIT_NUMERICAL
        assert exit_code_for(DataFileError("x")) == EXIT_IO
        assert exit_code_for(ManifestError("x")) == EXIT_IO
        assert exit_code_for(StageError("synth", LengthError("x"))) == EXIT_NUMERICAL
        assert exit_code_for(RuntimeError("x")) == 1


class TestParams:

    def test_show(self, runner):
        result = runner.invoke(main, ["params", "show", "--params", str(TABLE1_FILE)])
        assert result.exit_code == 0, result.output
        shown = json.loads(result.stdout)
        assert shown["derived"]["omega_m_hz"] == pytest.approx(280.0)
        assert shown["inputs"]["delta_over_kappa"] == 0.0292

    def test_missing_file(self, runner, tmp_path):
        result = runner.invoke(main, ["params", "show", "--params",
                                      str(tmp_path / "absent.toml")])
        assert result.exit_code == EXIT_IO
        assert "absent.toml" in result.output

    def test_no_parameter_source(self, runner):
        result = runner.invoke(main, ["params", "show"])
        assert result.exit_code == EXIT_CONFIG


class TestSimulate:

    def test_writes_trajectory(self, trajectory_csv):
        frame = pd.read_csv(trajectory_csv)
        assert list(frame.columns) == ["t", "q", "p", "X"]
        assert len(frame) == 10000

    def test_binary_format(self, runner, tmp_path):
        result = runner.invoke(main, ["--out-dir", str(tmp_path), "--format", "bin",
                                      "simulate", "--params", str(TABLE1_FILE),
                                      "--duration", "0.1"])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "simulate" / "trajectory.bin").read_bytes()[:4] == b"MSQZ"

    def test_coarse_sampling_is_numerical_error(self, runner, tmp_path):
        result = runner.invoke(main, ["--out-dir", str(tmp_path), "simulate", "--params",
                                      str(TABLE1_FILE), "--sample-rate", "100"])
        assert result.exit_code == EXIT_NUMERICAL


class TestDsp:

    def test_psd(self, runner, tmp_path, trajectory_csv):
        out = tmp_path / "psd.csv"
        result = runner.invoke(main, ["dsp", "psd", str(trajectory_csv), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert list(pd.read_csv(out).columns) == ["f_hz", "value_re", "value_im"]

    def test_bad_band(self, runner, trajectory_csv):
        result = runner.invoke(main, ["dsp", "bandpass", str(trajectory_csv),
                                      "--band", "360:170"])
        assert result.exit_code == EXIT_CONFIG

    def test_missing_column(self, runner, trajectory_csv):
        result = runner.invoke(main, ["dsp", "count", str(trajectory_csv),
                                      "--channel", "volts"])
        assert result.exit_code == EXIT_IO


class TestWiener:

    def test_synth(self, runner, tmp_path):
        result = runner.invoke(main, ["--out-dir", str(tmp_path), "wiener", "synth",
                                      "--params", str(TABLE1_FILE), "--grid", "0:2000:1"])
        assert result.exit_code == 0, result.output
        assert "omega'" in result.output
        frame = pd.read_csv(tmp_path / "synth" / "filters_analytic.csv")
        assert len(frame) == 2001

    def test_bad_grid(self, runner, tmp_path):
        result = runner.invoke(main, ["--out-dir", str(tmp_path), "wiener", "synth",
                                      "--params", str(TABLE1_FILE), "--grid", "0:2000"])
        assert result.exit_code == EXIT_CONFIG


class TestEstimate:

    def test_truth_reference_needs_state(self, runner, tmp_path, trajectory_csv):
        frame = pd.read_csv(trajectory_csv)[["t", "X"]]
        measured = tmp_path / "measured.csv"
        frame.to_csv(measured, index=False)
        result = runner.invoke(main, ["estimate", "run", "--data", str(measured),
                                      "--params", str(TABLE1_FILE), "--reference", "truth"])
        assert result.exit_code == EXIT_CONFIG

    def test_run(self, runner, tmp_path, trajectory_csv):
        out = tmp_path / "state.json"
        result = runner.invoke(main, ["estimate", "run", "--data", str(trajectory_csv),
                                      "--params", str(TABLE1_FILE), "--out", str(out)])
        assert result.exit_code == 0, result.output
        state = json.loads(out.read_text())
        assert state["purity"] > 0
        assert (tmp_path / "state_spectra.csv").exists()
        assert (tmp_path / "state_ellipse.csv").exists()

    def test_sweep_on_model(self, runner, tmp_path):
        out = tmp_path / "sweep.csv"
        result = runner.invoke(main, ["estimate", "sweep", "--params", str(TABLE1_FILE),
                                      "--points", "3", "--out", str(out)])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out)
        assert len(frame) == 6
        assert frame["purity"].notna().all()

    def test_sweep_measured_reference_needs_band(self, runner):
        result = runner.invoke(main, ["estimate", "sweep", "--params", str(TABLE1_FILE),
                                      "--points", "3", "--reference", "measured"])
        assert result.exit_code == EXIT_CONFIG

    def test_sweep_full_band_needs_state(self, runner, tmp_path, trajectory_csv):
        frame = pd.read_csv(trajectory_csv)[["t", "X"]]
        measured = tmp_path / "measured.csv"
        frame.to_csv(measured, index=False)
        result = runner.invoke(main, ["estimate", "sweep", "--data", str(measured),
                                      "--params", str(TABLE1_FILE), "--points", "3"])
        assert result.exit_code == EXIT_CONFIG


class TestPipelineCommands:

    def test_run_then_report(self, runner, tmp_path):
        run_file = tmp_path / "run.toml"
        run_file.write_text(
            "[run]\n"
            f"params = '{TABLE1_FILE.as_posix()}'\n"
            "out_dir = 'out'\n"
            "stages = ['simulate', 'synth', 'report']\n"
            "seed = 11\n"
            "[simulate]\n"
            "duration_s = 2.0\n"
            "sample_rate_hz = 10000.0\n"
            "[modulation]\n"
            "enabled = false\n"
            "[synth]\n"
            "display_grid = '0:1000:1'\n"
        )
        result = runner.invoke(main, ["--config", str(run_file), "run"])
        assert result.exit_code == 0, result.output
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["order"] == ["simulate", "synth", "report"]

        result = runner.invoke(main, ["--config", str(run_file), "report"])
        assert result.exit_code == 0, result.output
        assert "omega_m_hz" in result.output

    def test_run_needs_config(self, runner):
        result = runner.invoke(main, ["run"])
        assert result.exit_code == EXIT_CONFIG

    def test_report_without_manifest(self, runner, tmp_path):
        result = runner.invoke(main, ["--out-dir", str(tmp_path), "report"])
        assert result.exit_code == EXIT_IO
