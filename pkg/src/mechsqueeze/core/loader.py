"""
Reading parameter files, run files and data files
"""

import json
import logging
import struct
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from ..errors import ConfigError, DataFileError
from .langevin import Trajectory
from .params import SystemParams, params_from_mapping, validate
from .spring import SpringMeasurement
from .wiener import FilterResponse

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

# 16-byte header: magic, version, channel count, sample rate
BINARY_MAGIC = b"MSQZ"
BINARY_VERSION = 1
BINARY_HEADER = struct.Struct("<4sHHd")


class DataLoader:
    """
    Loads every input the pipeline consumes

    Missing files raise DataFileError naming the path; malformed content raises
    ConfigError (parameter and run files) or DataFileError (data files).
    """

    def _require(self, path: Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise DataFileError(f"File not found: {path}")
        return path

    def load_toml(self, path: Path) -> Dict[str, Any]:
        """
        Parse a TOML file

        Raises:
            DataFileError: If the file doesn't exist
            ConfigError: If the TOML is malformed
        """
        path = self._require(path)
        try:
            with open(path, "rb") as handle:
                return tomllib.load(handle)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Malformed TOML in {path}: {e}")

    def load_json(self, path: Path) -> Dict[str, Any]:
        """
        Parse a JSON document (manifests and stage summaries)

        Raises:
            DataFileError: If the file is missing or not valid JSON
        """
        path = self._require(path)
        try:
            with open(path, "r", encoding="utf-8") as handle:
                return json.load(handle)
        except json.JSONDecodeError as e:
            raise DataFileError(f"Malformed JSON in {path}: {e}")

    def load_params(self, path: Path) -> SystemParams:
        """Parameter file to validated SystemParams"""
        mapping = self.load_toml(path)
        logger.debug("Loaded parameter file %s", path)
        return validate(params_from_mapping(mapping))

    def load_trajectory(self, path: Path, sample_rate: Optional[float] = None) -> Trajectory:
        """
        Trajectory from CSV (``t`` column plus channels) or the binary container

        Args:
            path: File path; ``.bin`` selects the binary reader
            sample_rate: Overrides the rate inferred from the ``t`` column
        """
        path = self._require(path)
        if path.suffix == ".bin":
            return self._load_binary(path)
        try:
            frame = pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DataFileError(f"Failed to read trajectory {path}: {e}")
        if frame.empty:
            raise DataFileError(f"Trajectory file is empty: {path}")
        if sample_rate is None:
            if "t" not in frame.columns or len(frame) < 2:
                raise DataFileError(f"{path} needs a 't' column or an explicit sample rate")
            step = float(np.median(np.diff(frame["t"].to_numpy())))
            if step <= 0:
                raise DataFileError(f"Time column of {path} is not increasing")
            sample_rate = 1.0 / step
        channels = {name: frame[name].to_numpy(dtype=float)
                    for name in frame.columns if name != "t"}
        return Trajectory(sample_rate=sample_rate, channels=channels)

    def _load_binary(self, path: Path) -> Trajectory:
        raw = path.read_bytes()
        if len(raw) < BINARY_HEADER.size:
            raise DataFileError(f"Truncated binary trajectory: {path}")
        magic, version, count, sample_rate = BINARY_HEADER.unpack_from(raw, 0)
        if magic != BINARY_MAGIC:
            raise DataFileError(f"Not a trajectory container: {path}")
        if version != BINARY_VERSION:
            raise DataFileError(f"Unsupported container version {version}: {path}")
        offset = BINARY_HEADER.size
        try:
            names = []
            for _ in range(count):
                (length,) = struct.unpack_from("<H", raw, offset)
                offset += 2
                names.append(raw[offset:offset + length].decode("utf-8"))
                offset += length
            (samples, seed) = struct.unpack_from("<Qq", raw, offset)
            offset += 16
            data = np.frombuffer(raw, dtype="<f8", count=samples * count, offset=offset)
        except (struct.error, ValueError, UnicodeDecodeError) as e:
            raise DataFileError(f"Corrupt binary trajectory {path}: {e}")
        data = data.reshape(count, samples)
        channels = {name: data[i].copy() for i, name in enumerate(names)}
        return Trajectory(sample_rate=sample_rate, channels=channels,
                          seed=None if seed < 0 else int(seed))

    def load_spring_measurement(self, path: Path, incident_power: float = 0.0
                                ) -> SpringMeasurement:
        """CSV with columns delta, f_hz, sigma_hz"""
        frame = self._read_columns(path, ("delta", "f_hz", "sigma_hz"))
        return SpringMeasurement(
            detuning_samples=frame["delta"].to_numpy(dtype=float),
            resonance_samples=frame["f_hz"].to_numpy(dtype=float),
            resonance_errors=frame["sigma_hz"].to_numpy(dtype=float),
            incident_power=incident_power,
        )

    def load_filters(self, path: Path) -> FilterResponse:
        """CSV with columns f_hz, Hq_re, Hq_im, Hp_re, Hp_im"""
        frame = self._read_columns(path, ("f_hz", "Hq_re", "Hq_im", "Hp_re", "Hp_im"))
        source = "oracle" if "oracle" in Path(path).stem else "analytic"
        return FilterResponse(
            frequencies=frame["f_hz"].to_numpy(dtype=float),
            H_q=frame["Hq_re"].to_numpy() + 1j * frame["Hq_im"].to_numpy(),
            H_p=frame["Hp_re"].to_numpy() + 1j * frame["Hp_im"].to_numpy(),
            source=source,
        )

    def _read_columns(self, path: Path, columns) -> pd.DataFrame:
        path = self._require(path)
        try:
            frame = pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DataFileError(f"Failed to read {path}: {e}")
        missing = [name for name in columns if name not in frame.columns]
        if missing:
            raise DataFileError(f"{path} is missing columns: {', '.join(missing)}")
        return frame
