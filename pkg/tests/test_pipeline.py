"""
Tests for run configuration, the staged pipeline, its manifest and the report bundle
"""

import json
import warnings

import numpy as np
import pandas as pd
import pytest

from mechsqueeze.core.langevin import build_model, simulate
from mechsqueeze.core.loader import DataLoader
from mechsqueeze.core.pipeline import (
    Pipeline,
    RunConfig,
    report,
    stage_seed,
    verify_manifest,
)
from mechsqueeze.errors import (ConfigError, DataFileError, ManifestError, StageError)
from tests.conftest import REPO_ROOT, TABLE1_FILE


def small_mapping(out_dir, stages=("simulate", "synth", "estimate", "sweep", "report"),
                  seed=7):
    return {
        "run": {"params": str(TABLE1_FILE), "out_dir": str(out_dir),
                "stages": list(stages), "seed": seed},
        "simulate": {"duration_s": 5.0, "sample_rate_hz": 10000.0},
        "modulation": {"enabled": False},
        "synth": {"display_grid": "0:2000:1"},
        "sweep": {"points": 3, "evaluator": "model"},
    }


def run_small(out_dir, **kwargs):
    config = RunConfig.from_mapping(small_mapping(out_dir, **kwargs), out_dir.parent)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return Pipeline(config).run()


class TestRunConfig:

    def test_sample_run_file(self):
        config = RunConfig.from_file(REPO_ROOT / "samples" / "run_synthetic.toml")
        assert config.params_path.resolve() == TABLE1_FILE.resolve()
        assert config.stages[0] == "simulate"
        assert config.format == "bin"
        assert config.ident.band_hz == (170.0, 360.0)
        assert config.sweep.evaluator == "model"

    def test_recorded_run_file_resolves_data(self):
        config = RunConfig.from_file(REPO_ROOT / "samples" / "run_recorded.toml")
        assert config.data.endswith("recorded.csv")
        assert config.estimate.notch_spec().n_harmonics == 6

    def test_overrides_win(self, tmp_path):
        config = RunConfig.from_mapping(small_mapping(tmp_path / "a"), tmp_path,
                                        out_dir=str(tmp_path / "b"), seed=None)
        assert config.out_dir == tmp_path / "b"
        assert config.seed == 7

    def test_stage_order(self, tmp_path):
        with pytest.raises(ConfigError, match="Stages must follow"):
            RunConfig.from_mapping(small_mapping(tmp_path, stages=("synth", "simulate")),
                                   tmp_path)

    def test_simulate_and_ingest_conflict(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_mapping(small_mapping(tmp_path, stages=("simulate", "ingest")),
                                   tmp_path)

    def test_unknown_section_key(self, tmp_path):
        mapping = small_mapping(tmp_path)
        mapping["synth"]["grid"] = "0:10:1"
        with pytest.raises(ConfigError, match="unknown keys"):
            RunConfig.from_mapping(mapping, tmp_path)

    def test_bad_band(self, tmp_path):
        mapping = small_mapping(tmp_path)
        mapping["estimate"] = {"band": "auto:105"}
        with pytest.raises(ConfigError):
            RunConfig.from_mapping(mapping, tmp_path)

    def test_params_required(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"run": {}}, tmp_path)

    def test_sweep_defaults_score_against_truth(self, tmp_path):
        config = RunConfig.from_mapping(small_mapping(tmp_path), tmp_path)
        assert config.sweep.source == "oracle"
        assert config.sweep.reference == "truth"
        assert config.sweep.band == "full"

    def test_recorded_run_file_sweeps_against_record(self):
        config = RunConfig.from_file(REPO_ROOT / "samples" / "run_recorded.toml")
        assert config.sweep.reference == "measured"
        assert config.sweep.band == "105:auto"

    def test_measured_sweep_needs_finite_band(self, tmp_path):
        mapping = small_mapping(tmp_path)
        mapping["sweep"]["reference"] = "measured"
        with pytest.raises(ConfigError, match="finite sweep.band"):
            RunConfig.from_mapping(mapping, tmp_path)

    def test_measured_sweep_warns(self, tmp_path, caplog):
        mapping = small_mapping(tmp_path)
        mapping["sweep"].update({"reference": "measured", "band": "105:auto",
                                 "source": "oracle"})
        with caplog.at_level("WARNING", logger="mechsqueeze.core.pipeline"):
            RunConfig.from_mapping(mapping, tmp_path)
        assert "will not locate n_th or N_th" in caplog.text
        assert "oracle" in caplog.text

    def test_bad_sweep_settings(self, tmp_path):
        for key, value in (("source", "kalman"), ("reference", "record"),
                           ("band", "200:100")):
            mapping = small_mapping(tmp_path)
            mapping["sweep"][key] = value
            with pytest.raises(ConfigError):
                RunConfig.from_mapping(mapping, tmp_path)

    def test_stage_seeds_are_independent(self):
        assert stage_seed(7, "simulate", 0) == stage_seed(7, "simulate", 0)
        assert stage_seed(7, "simulate", 0) != stage_seed(7, "simulate", 1)
        assert stage_seed(7, "simulate", 0) != stage_seed(8, "simulate", 0)


class TestPipelineRun:

    def test_outputs_and_manifest(self, tmp_path):
        out_dir = tmp_path / "run"
        manifest = run_small(out_dir)
        assert manifest["order"] == ["simulate", "synth", "estimate", "sweep", "report"]
        on_disk = json.loads((out_dir / "manifest.json").read_text())
        assert on_disk["stages"].keys() == manifest["stages"].keys()
        verify_manifest(manifest, out_dir)
        for name in ("simulate/trajectory.csv", "synth/filters.csv",
                     "synth/coefficients.json", "estimate/state.json",
                     "estimate/spectra.csv", "sweep/sweep.csv", "report/summary.json",
                     "report/report.xlsx"):
            assert (out_dir / name).exists(), name

        summary = json.loads((out_dir / "report" / "summary.json").read_text())
        headline = summary["headlines"]["omega_m_hz"]
        assert headline["value"] == pytest.approx(280.0)
        assert headline["published"] == 280.0
        assert headline["provenance"] == "parameter file"
        assert summary["headlines"]["omega_prime_hz"]["value"] == pytest.approx(724.5,
                                                                               rel=0.05)
        state = json.loads((out_dir / "estimate" / "state.json").read_text())
        assert state["reference"] == "measured"
        assert "truth_state" in state
        sweep = json.loads((out_dir / "sweep" / "sweep.json").read_text())
        assert sweep["filter_source"] == "oracle"
        assert sweep["band_hz"] == "full"
        assert sweep["failed_points"] == 0
        sheets = pd.read_excel(out_dir / "report" / "report.xlsx", sheet_name=None,
                               engine="openpyxl")
        assert {"summary", "spectra", "cospectrum", "ellipse", "purity_sweep"} <= set(sheets)

    def test_same_seed_same_outputs(self, tmp_path):
        first = run_small(tmp_path / "one")
        second = run_small(tmp_path / "two")
        for stage in ("simulate", "synth", "estimate", "sweep"):
            assert first["stages"][stage]["outputs"] == second["stages"][stage]["outputs"]
        assert first["config"]["seed"] == second["config"]["seed"]
        assert (first["stages"]["report"]["outputs"]
                == second["stages"]["report"]["outputs"])

    def test_rerun_skips_current_stages(self, tmp_path, caplog):
        out_dir = tmp_path / "run"
        run_small(out_dir, stages=("simulate", "synth"))
        trajectory = out_dir / "simulate" / "trajectory.csv"
        stamp = trajectory.stat().st_mtime_ns
        with caplog.at_level("INFO", logger="mechsqueeze.core.pipeline"):
            run_small(out_dir, stages=("simulate", "synth"))
        assert trajectory.stat().st_mtime_ns == stamp
        assert "Stage simulate is up to date; skipping" in caplog.text

    def test_changed_seed_reruns(self, tmp_path):
        out_dir = tmp_path / "run"
        before = run_small(out_dir, stages=("simulate",))
        after = run_small(out_dir, stages=("simulate",), seed=8)
        assert (before["stages"]["simulate"]["outputs"]
                != after["stages"]["simulate"]["outputs"])

    def test_tampered_output_is_detected(self, tmp_path):
        out_dir = tmp_path / "run"
        manifest = run_small(out_dir, stages=("simulate",))
        (out_dir / "simulate" / "stats.json").write_text("{}")
        with pytest.raises(ManifestError):
            verify_manifest(manifest, out_dir)

    def test_missing_params_file(self, tmp_path):
        mapping = small_mapping(tmp_path / "run")
        mapping["run"]["params"] = str(tmp_path / "absent.toml")
        config = RunConfig.from_mapping(mapping, tmp_path)
        with pytest.raises(DataFileError, match="absent.toml"):
            Pipeline(config).run()

    def test_failed_stage_keeps_partial_manifest(self, tmp_path):
        out_dir = tmp_path / "run"
        with pytest.raises(StageError) as excinfo:
            run_small(out_dir, stages=("simulate", "ident"))
        assert excinfo.value.stage == "ident"
        assert isinstance(excinfo.value.cause, ConfigError)
        assert "simulate" in excinfo.value.partial_manifest["stages"]
        assert "ident" not in json.loads((out_dir / "manifest.json").read_text())["stages"]


class TestIngest:

    def test_volts_are_calibrated(self, tmp_path):
        fs = 10000.0
        params = DataLoader().load_params(TABLE1_FILE)
        model = build_model(params)
        trajectory = simulate(model, 2.0, fs, seed=5)
        volts = (trajectory["X"] / model.position_gain * params.x_zpf
                 / params.calibration_m_per_v)
        data = tmp_path / "recorded.csv"
        pd.DataFrame({"t": trajectory.time, "volts": volts}).to_csv(data, index=False)

        mapping = small_mapping(tmp_path / "run", stages=("ingest", "synth", "estimate"))
        mapping["run"]["data"] = str(data)
        config = RunConfig.from_mapping(mapping, tmp_path)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            manifest = Pipeline(config).run()

        ingested = DataLoader().load_trajectory(tmp_path / "run" / "ingest" / "trajectory.csv")
        np.testing.assert_allclose(ingested["X"], trajectory["X"], rtol=1e-9)
        assert manifest["stages"]["ingest"]["inputs"]["data"]
        state = json.loads((tmp_path / "run" / "estimate" / "state.json").read_text())
        assert "truth_state" not in state


    def test_recorded_sweep_needs_measured_reference(self, tmp_path):
        fs = 10000.0
        params = DataLoader().load_params(TABLE1_FILE)
        trajectory = simulate(build_model(params), 2.0, fs, seed=6)
        data = tmp_path / "recorded.csv"
        pd.DataFrame({"t": trajectory.time, "X": trajectory["X"]}).to_csv(data, index=False)

        mapping = small_mapping(tmp_path / "run", stages=("ingest", "synth", "sweep"))
        mapping["run"]["data"] = str(data)
        mapping["sweep"] = {"points": 3, "evaluator": "data"}
        config = RunConfig.from_mapping(mapping, tmp_path)
        with pytest.raises(StageError) as excinfo:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                Pipeline(config).run()
        assert excinfo.value.stage == "sweep"
        assert "reference = 'measured'" in str(excinfo.value.cause)

        mapping["sweep"].update({"reference": "measured", "band": "105:auto",
                                 "source": "analytic"})
        config = RunConfig.from_mapping(mapping, tmp_path)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            Pipeline(config).run()
        summary = json.loads((tmp_path / "run" / "sweep" / "sweep.json").read_text())
        assert summary["reference"] == "measured"
        assert summary["filter_source"] == "analytic"
        assert summary["points"] == 6

class TestReport:

    def test_simulate_only(self, tmp_path):
        out_dir = tmp_path / "run"
        manifest = run_small(out_dir, stages=("simulate",))
        bundle = report(manifest, out_dir)
        headlines = bundle["summary"]["headlines"]
        assert set(headlines) == {"omega_m_hz", "g_m_hz", "quantum_cooperativity"}
        assert headlines["g_m_hz"]["relative_deviation"] == pytest.approx(0.0, abs=0.1)
        assert (out_dir / "report" / "summary.json").exists()

    def test_needs_data_stage(self, tmp_path):
        with pytest.raises(ManifestError):
            report({"stages": {}}, tmp_path)
