"""
Helper utility functions
"""

import hashlib
import math
import re
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from ..errors import ConfigError

TWO_PI = 2.0 * math.pi

Number = Union[float, int, np.ndarray]


def hz_to_rad(value: Number) -> Number:
    """Ordinary frequency (Hz) to angular frequency (rad/s)"""
    return TWO_PI * value


def rad_to_hz(value: Number) -> Number:
    """Angular frequency (rad/s) to ordinary frequency (Hz)"""
    return value / TWO_PI


def format_quantity(value: Optional[float], unit: str = "", digits: int = 4) -> str:
    """
    Format a number with a unit for console output

    Args:
        value: Number to format (None and NaN print as "n/a")
        unit: Unit suffix
        digits: Significant digits

    Returns:
        Formatted string
    """
    try:
        number = float(value)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        return "n/a"
    if math.isnan(number):
        return "n/a"
    text = f"{number:.{digits}g}"
    return f"{text} {unit}".strip()


def parse_band(text: str) -> Tuple[float, Optional[float]]:
    """
    Parse an integration band string such as "105:auto" or "105:1800"

    Args:
        text: "<f_lo>:<f_hi>" in Hz; f_hi may be "auto"

    Returns:
        (f_lo, f_hi) with f_hi None for "auto"

    Raises:
        ConfigError: If the string is malformed
    """
    parts = [part.strip() for part in str(text).split(":")]
    if len(parts) != 2:
        raise ConfigError(f"band must look like 'f_lo:f_hi', got {text!r}")
    try:
        f_lo = float(parts[0])
        f_hi = None if parts[1].lower() == "auto" else float(parts[1])
    except ValueError:
        raise ConfigError(f"band must contain numbers or 'auto', got {text!r}")
    if f_hi is not None and f_hi <= f_lo:
        raise ConfigError(f"band upper edge must exceed lower edge, got {text!r}")
    return f_lo, f_hi


def parse_grid(text: str) -> np.ndarray:
    """
    Parse a frequency grid string "f0:f1:df" (Hz, inclusive of f1 when on-grid)

    Args:
        text: Grid description

    Returns:
        Uniform frequency grid in Hz

    Raises:
        ConfigError: If the string is malformed
    """
    match = re.fullmatch(r"\s*([^:]+):([^:]+):([^:]+)\s*", str(text))
    if not match:
        raise ConfigError(f"grid must look like 'f0:f1:df', got {text!r}")
    try:
        f0, f1, df = (float(group) for group in match.groups())
    except ValueError:
        raise ConfigError(f"grid must contain numbers, got {text!r}")
    if df <= 0 or f1 <= f0:
        raise ConfigError(f"grid needs df > 0 and f1 > f0, got {text!r}")
    count = int(math.floor((f1 - f0) / df + 1e-9)) + 1
    return f0 + df * np.arange(count)


def log_grid(center: float, decades: float = 1.0, points: int = 9) -> np.ndarray:
    """
    Log-spaced grid from center/10**decades to center*10**decades

    Args:
        center: Grid center (included when points is odd)
        decades: Half-width in decades
        points: Number of points

    Returns:
        Grid values
    """
    if points < 1:
        raise ConfigError("points must be >= 1")
    if points == 1:
        return np.array([float(center)])
    return float(center) * np.logspace(-decades, decades, points)


def file_sha256(path: Path, chunk_size: int = 1 << 20) -> str:
    """
    Hex SHA-256 digest of a file's contents

    Args:
        path: File to hash
        chunk_size: Read size in bytes

    Returns:
        Hex digest string
    """
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def text_sha256(text: str) -> str:
    """Hex SHA-256 digest of a UTF-8 string"""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def relative_deviation(value: float, reference: float) -> Optional[float]:
    """
    Relative deviation (value - reference) / |reference|

    Returns:
        Deviation, or None when the reference is zero or either value is missing
    """
    if value is None or reference is None or reference == 0:
        return None
    return (float(value) - float(reference)) / abs(float(reference))
