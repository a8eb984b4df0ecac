"""
Tests for reading inputs and writing artifacts
"""

import json

import numpy as np
import pandas as pd
import pytest

from mechsqueeze.core.exporter import DataExporter
from mechsqueeze.core.langevin import Trajectory
from mechsqueeze.core.loader import DataLoader
from mechsqueeze.core.wiener import synthesize
from mechsqueeze.errors import ConfigError, DataFileError


@pytest.fixture
def loader():
    return DataLoader()


@pytest.fixture
def exporter(tmp_path):
    return DataExporter(tmp_path)


@pytest.fixture
def trajectory(rng):
    return Trajectory(
        sample_rate=2000.0,
        channels={"q": rng.standard_normal(500), "p": rng.standard_normal(500),
                  "X": rng.standard_normal(500)},
        seed=42,
    )


class TestTrajectoryFiles:

    def test_csv(self, loader, exporter, trajectory, tmp_path):
        path = exporter.export_trajectory(trajectory, tmp_path / "traj.csv")
        assert path.read_text().splitlines()[0] == "t,q,p,X"
        loaded = loader.load_trajectory(path)
        assert loaded.sample_rate == pytest.approx(2000.0, rel=1e-9)
        np.testing.assert_allclose(loaded["X"], trajectory["X"], rtol=1e-10)

    def test_binary(self, loader, exporter, trajectory, tmp_path):
        path = exporter.export_trajectory(trajectory, tmp_path / "traj.bin", format="bin")
        assert path.read_bytes()[:4] == b"MSQZ"
        loaded = loader.load_trajectory(path)
        assert loaded.seed == 42
        assert list(loaded.channels) == ["q", "p", "X"]
        np.testing.assert_array_equal(loaded["q"], trajectory["q"])

    def test_explicit_rate_without_time_column(self, loader, tmp_path):
        path = tmp_path / "volts.csv"
        pd.DataFrame({"volts": np.arange(10.0)}).to_csv(path, index=False)
        assert loader.load_trajectory(path, sample_rate=50.0).duration == pytest.approx(0.2)
        with pytest.raises(DataFileError):
            loader.load_trajectory(path)

    def test_not_a_container(self, loader, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(DataFileError, match="Not a trajectory container"):
            loader.load_trajectory(path)

    def test_truncated_container(self, loader, tmp_path):
        path = tmp_path / "short.bin"
        path.write_bytes(b"MSQZ")
        with pytest.raises(DataFileError):
            loader.load_trajectory(path)

    def test_missing_file(self, loader, tmp_path):
        with pytest.raises(DataFileError, match="File not found"):
            loader.load_trajectory(tmp_path / "absent.csv")

    def test_unknown_format(self, exporter, trajectory, tmp_path):
        with pytest.raises(ConfigError):
            exporter.export_trajectory(trajectory, tmp_path / "traj.h5", format="hdf5")


class TestStructuredFiles:

    def test_malformed_toml(self, loader, tmp_path):
        path = tmp_path / "params.toml"
        path.write_text("mass_mg = = 7\n")
        with pytest.raises(ConfigError):
            loader.load_params(path)

    def test_malformed_json(self, loader, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(DataFileError):
            loader.load_json(path)

    def test_spring_measurement_columns(self, loader, tmp_path):
        path = tmp_path / "spring.csv"
        pd.DataFrame({"delta": [0.0, 0.01], "f_hz": [280.0, 300.0]}).to_csv(path, index=False)
        with pytest.raises(DataFileError, match="sigma_hz"):
            loader.load_spring_measurement(path)

    def test_filters(self, loader, exporter, table1, tmp_path):
        filters = synthesize(table1, np.linspace(0.0, 2000.0, 201), "oracle")
        path = exporter.export_frame(filters.to_frame(), tmp_path / "filters_oracle.csv")
        loaded = loader.load_filters(path)
        assert loaded.source == "oracle"
        np.testing.assert_allclose(loaded.H_q, filters.H_q, rtol=1e-10)

    def test_json_document(self, exporter, tmp_path):
        path = exporter.export_json({"b": np.float64(1.5), "a": [np.int64(2), float("nan")],
                                     "flag": np.bool_(True)}, tmp_path / "out.json")
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": [2, "nan"], "b": 1.5, "flag": True}


class TestTables:

    def test_empty_frame(self, exporter, tmp_path):
        with pytest.raises(ValueError):
            exporter.export_frame(pd.DataFrame(), tmp_path / "empty.csv")

    def test_workbook_is_reproducible(self, exporter, tmp_path):
        sheets = {
            "spectra": pd.DataFrame({"f_hz": [1.0, 2.0], "S_qq": [3.0, 4.0]}),
            "a_sheet_name_well_beyond_excel_limits": pd.DataFrame({"x": [1]}),
        }
        first = exporter.export_workbook(sheets, tmp_path / "one.xlsx")
        second = exporter.export_workbook(sheets, tmp_path / "two.xlsx")
        assert first.read_bytes() == second.read_bytes()
        loaded = pd.read_excel(first, sheet_name=None, engine="openpyxl")
        assert set(loaded) == {"spectra", "a_sheet_name_well_beyond_excel_"}

    def test_validate_frame(self, exporter):
        frame = pd.DataFrame({"f_hz": [1.0, 2.0], "purity": [0.1, np.nan]})
        report = exporter.validate_frame(frame, ["f_hz", "purity", "n_th"])
        assert not report["valid"]
        assert report["errors"] == ["Missing required column 'n_th'"]
        assert report["warnings"] == ["Column 'purity': 1 non-finite values"]
        assert exporter.validate_frame(pd.DataFrame(), [])["rows"] == 0

    def test_stage_dir(self, exporter, tmp_path):
        assert exporter.stage_dir("synth") == tmp_path / "synth"
        assert (tmp_path / "synth").is_dir()
