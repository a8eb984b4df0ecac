"""
Export of run artifacts: CSV tables, trajectories, JSON summaries and Excel workbooks
"""

import json
import math
import re
import struct
import zipfile
from pathlib import Path
from typing import Any, Dict, List, Mapping

import numpy as np
import pandas as pd

from ..errors import ConfigError, DataFileError
from .langevin import Trajectory
from .loader import BINARY_HEADER, BINARY_MAGIC, BINARY_VERSION

EXPORT_FORMATS = ("csv", "bin")
FIXED_TIMESTAMP = "2000-01-01T00:00:00Z"


def _jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats for JSON output"""
    if isinstance(value, Mapping):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        number = float(value)
        return number if math.isfinite(number) else str(number)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


class DataExporter:
    """
    Handles writing pipeline artifacts into an output directory
    """

    def __init__(self, base_output_dir: Path = Path("outputs")):
        self.base_output_dir = Path(base_output_dir)

    def stage_dir(self, stage: str) -> Path:
        """Per-stage directory under the output root (created on demand)"""
        directory = self.base_output_dir / stage
        directory.mkdir(parents=True, exist_ok=True)
        return directory

    def export_frame(self, frame: pd.DataFrame, output_path: Path) -> Path:
        """
        Write a table as CSV

        Raises:
            ValueError: If the table is empty
            DataFileError: If the file cannot be written
        """
        if frame is None or frame.empty:
            raise ValueError(f"Nothing to export to {output_path}")
        try:
            output_path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(output_path, index=False, encoding="utf-8", float_format="%.12g")
        except OSError as e:
            raise DataFileError(f"Failed to export CSV: {e}")
        return output_path

    def export_trajectory(self, trajectory: Trajectory, output_path: Path,
                          format: str = "csv") -> Path:
        """
        Write a trajectory as CSV (``t`` first) or as the binary container

        Raises:
            ConfigError: If the format is not supported
        """
        format = format.lower()
        if format not in EXPORT_FORMATS:
            raise ConfigError(f"Unsupported trajectory format: {format}")
        if format == "csv":
            return self.export_frame(trajectory.to_frame(), output_path)
        return self._export_binary(trajectory, output_path)

    def _export_binary(self, trajectory: Trajectory, output_path: Path) -> Path:
        names = list(trajectory.channels)
        parts = [BINARY_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, len(names),
                                    float(trajectory.sample_rate))]
        for name in names:
            encoded = name.encode("utf-8")
            parts.append(struct.pack("<H", len(encoded)))
            parts.append(encoded)
        seed = -1 if trajectory.seed is None else int(trajectory.seed)
        parts.append(struct.pack("<Qq", len(trajectory), seed))
        data = np.vstack([trajectory.channels[name] for name in names]).astype("<f8")
        parts.append(data.tobytes())
        try:
            output_path.parent.mkdir(parents=True, exist_ok=True)
            output_path.write_bytes(b"".join(parts))
        except OSError as e:
            raise DataFileError(f"Failed to export binary trajectory: {e}")
        return output_path

    def export_json(self, data: Mapping[str, Any], output_path: Path) -> Path:
        """Write a JSON document (sorted keys, non-finite floats as strings)"""
        try:
            output_path.parent.mkdir(parents=True, exist_ok=True)
            with open(output_path, "w", encoding="utf-8") as f:
                json.dump(_jsonable(data), f, indent=2, sort_keys=True)
                f.write("\n")
        except OSError as e:
            raise DataFileError(f"Failed to export JSON: {e}")
        return output_path

    def export_workbook(self, sheets: Mapping[str, pd.DataFrame], output_path: Path) -> Path:
        """
        Write several tables into one Excel workbook, one sheet each

        Args:
            sheets: Sheet name to table (names are cut to Excel's 31 characters)
            output_path: Path for the .xlsx file
        """
        try:
            output_path.parent.mkdir(parents=True, exist_ok=True)
            with pd.ExcelWriter(output_path, engine="openpyxl") as writer:
                for name, frame in sheets.items():
                    sheet_name = name[:31]
                    frame.to_excel(writer, sheet_name=sheet_name, index=False)
                    worksheet = writer.sheets[sheet_name]

                    # Auto-adjust column widths
                    for column in worksheet.columns:
                        max_length = 0
                        column_letter = column[0].column_letter
                        for cell in column:
                            if cell.value is not None:
                                max_length = max(max_length, len(str(cell.value)))
                        worksheet.column_dimensions[column_letter].width = min(
                            max_length + 2, 50)
            self._normalize_archive(output_path)
        except OSError as e:
            raise DataFileError(f"Failed to export Excel: {e}")
        except zipfile.BadZipFile as e:
            raise DataFileError(f"Workbook archive is corrupt: {e}")
        return output_path

    def _normalize_archive(self, output_path: Path) -> None:
        """Pin zip entry times and document timestamps so equal content gives equal bytes"""
        with zipfile.ZipFile(output_path) as source:
            entries = [(info.filename, source.read(info)) for info in source.infolist()]
        with zipfile.ZipFile(output_path, "w", zipfile.ZIP_DEFLATED) as target:
            for name, data in entries:
                if name == "docProps/core.xml":
                    data = re.sub(rb"(<dcterms:(?:created|modified)[^>]*>)[^<]*",
                                  rb"\g<1>" + FIXED_TIMESTAMP.encode("ascii"), data)
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                target.writestr(info, data)

    def validate_frame(self, frame: pd.DataFrame, required_columns: List[str]) -> Dict[str, Any]:
        """
        Check a table before export

        Returns:
            Validation report with errors (missing columns, empty table) and warnings
            (non-finite values)
        """
        if frame is None or frame.empty:
            return {"valid": False, "errors": ["No rows provided"], "warnings": [], "rows": 0}
        errors = [f"Missing required column '{name}'" for name in required_columns
                  if name not in frame.columns]
        warnings = []
        numeric = frame.select_dtypes(include=[np.number])
        for name in numeric.columns:
            bad = int((~np.isfinite(numeric[name].to_numpy())).sum())
            if bad:
                warnings.append(f"Column '{name}': {bad} non-finite values")
        return {"valid": not errors, "errors": errors, "warnings": warnings,
                "rows": int(len(frame))}
