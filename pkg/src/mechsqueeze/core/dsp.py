"""
Signal-processing kernels: spectra, filters, analytic signal, zero-crossing
frequency counting and binning
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import signal
from scipy.integrate import trapezoid

from ..errors import (BandError, ConfigError, GridMismatchError, LengthError,
                      NoCrossingsError)

logger = logging.getLogger(__name__)

SPECTRUM_KINDS = ("psd", "cross", "transfer", "coherence")
MIN_FILTER_LENGTH = 16


@dataclass(frozen=True)
class Spectrum:
    """
    Frequency-sampled spectrum on a uniform ascending grid (Hz)

    ``values`` are real for PSDs (units^2/Hz) and complex for cross spectra; the
    cospectrum is the real part, the quadspectrum the imaginary part.
    """

    frequencies: np.ndarray
    values: np.ndarray
    resolution: float
    kind: str = "psd"

    def __post_init__(self) -> None:
        if self.kind not in SPECTRUM_KINDS:
            raise ValueError(f"kind must be one of {SPECTRUM_KINDS}")
        if len(self.frequencies) != len(self.values):
            raise LengthError("frequencies and values differ in length")
        if self.kind == "psd" and np.any(np.asarray(self.values) < 0):
            raise ValueError("PSD values must be >= 0")

    @property
    def cospectrum(self) -> np.ndarray:
        return np.real(self.values)

    @property
    def quadspectrum(self) -> np.ndarray:
        return np.imag(self.values)

    def integrate(self, f_lo: float, f_hi: float, part: str = "real") -> float:
        """
        Trapezoidal integral over the bins inside [f_lo, f_hi]

        Args:
            f_lo: Lower band edge (Hz)
            f_hi: Upper band edge (Hz)
            part: "real" (PSD or cospectrum) or "imag"

        Raises:
            BandError: If the band is empty or leaves the grid
        """
        if not f_lo < f_hi:
            raise BandError(f"band needs f_lo < f_hi, got [{f_lo}, {f_hi}]")
        tolerance = 1e-9 * self.resolution
        if f_lo < self.frequencies[0] - tolerance or f_hi > self.frequencies[-1] + tolerance:
            raise BandError(f"band [{f_lo:g}, {f_hi:g}] Hz outside grid "
                            f"[{self.frequencies[0]:g}, {self.frequencies[-1]:g}] Hz")
        mask = (self.frequencies >= f_lo - tolerance) & (self.frequencies <= f_hi + tolerance)
        if mask.sum() < 2:
            raise BandError(f"band [{f_lo:g}, {f_hi:g}] Hz holds fewer than two bins")
        values = np.real(self.values) if part == "real" else np.imag(self.values)
        return float(trapezoid(values[mask], self.frequencies[mask]))

    def same_grid(self, other: "Spectrum") -> bool:
        return (len(self.frequencies) == len(other.frequencies)
                and np.allclose(self.frequencies, other.frequencies))

    def to_frame(self) -> pd.DataFrame:
        """Columns f_hz, value_re, value_im"""
        return pd.DataFrame({
            "f_hz": self.frequencies,
            "value_re": np.real(self.values),
            "value_im": np.imag(self.values),
        })


def segment_for_resolution(sample_rate: float, resolution: float) -> int:
    """Welch segment length giving the requested frequency resolution"""
    if resolution <= 0:
        raise ConfigError("resolution must be > 0")
    return int(round(sample_rate / resolution))


def _welch_arguments(length: int, sample_rate: float, segment_length: Optional[int],
                     resolution: Optional[float], overlap: float) -> Tuple[int, int]:
    if segment_length is None:
        segment_length = (segment_for_resolution(sample_rate, resolution)
                          if resolution is not None else min(length, 256))
    if segment_length < 2 or segment_length > length:
        raise LengthError(f"segment length {segment_length} does not fit a series of "
                          f"{length} samples")
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must lie in [0, 1), got {overlap}")
    return segment_length, int(round(overlap * segment_length))


def psd_welch(series: np.ndarray, sample_rate: float, segment_length: Optional[int] = None,
              overlap: float = 0.5, window: str = "hann",
              resolution: Optional[float] = None) -> Spectrum:
    """
    One-sided Welch power spectral density

    Args:
        series: Real samples
        sample_rate: Hz
        segment_length: Samples per segment (derived from ``resolution`` when omitted)
        overlap: Fraction of segment overlap in [0, 1)
        window: Window name understood by scipy
        resolution: Target resolution in Hz

    Returns:
        Spectrum of kind "psd"; sum(values) * resolution is the series variance
    """
    series = np.asarray(series, dtype=float)
    nperseg, noverlap = _welch_arguments(series.size, sample_rate, segment_length,
                                         resolution, overlap)
    freqs, values = signal.welch(series, fs=sample_rate, window=window, nperseg=nperseg,
                                 noverlap=noverlap, detrend="constant",
                                 return_onesided=True, scaling="density")
    return Spectrum(freqs, values, sample_rate / nperseg, "psd")


def cross_spectrum(a: np.ndarray, b: np.ndarray, sample_rate: float,
                   segment_length: Optional[int] = None, overlap: float = 0.5,
                   window: str = "hann", resolution: Optional[float] = None,
                   onesided: bool = True) -> Spectrum:
    """
    Welch cross-spectral density conj(A) * B

    With ``onesided=False`` the full band is returned in ascending frequency order,
    where S(-f) = conj(S(f)) for real inputs.

    Raises:
        LengthError: If the series differ in length
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthError(f"series lengths differ: {a.size} vs {b.size}")
    nperseg, noverlap = _welch_arguments(a.size, sample_rate, segment_length,
                                         resolution, overlap)
    freqs, values = signal.csd(a, b, fs=sample_rate, window=window, nperseg=nperseg,
                               noverlap=noverlap, detrend="constant",
                               return_onesided=onesided, scaling="density")
    if not onesided:
        order = np.argsort(freqs)
        freqs, values = freqs[order], values[order]
    return Spectrum(freqs, values, sample_rate / nperseg, "cross")


def coherence(a: np.ndarray, b: np.ndarray, sample_rate: float,
              segment_length: Optional[int] = None, overlap: float = 0.5,
              window: str = "hann", resolution: Optional[float] = None) -> Spectrum:
    """Magnitude-squared coherence |S_ab|^2 / (S_aa S_bb)"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthError(f"series lengths differ: {a.size} vs {b.size}")
    nperseg, noverlap = _welch_arguments(a.size, sample_rate, segment_length,
                                         resolution, overlap)
    freqs, values = signal.coherence(a, b, fs=sample_rate, window=window,
                                     nperseg=nperseg, noverlap=noverlap)
    return Spectrum(freqs, values, sample_rate / nperseg, "coherence")


def _check_length(series: np.ndarray) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if series.size < MIN_FILTER_LENGTH:
        raise LengthError(f"series needs at least {MIN_FILTER_LENGTH} samples")
    return series


def _apply(sos: np.ndarray, series: np.ndarray, zero_phase: bool) -> np.ndarray:
    if zero_phase:
        return signal.sosfiltfilt(sos, series)
    return signal.sosfilt(sos, series)


def bandpass(series: np.ndarray, f_lo: float, f_hi: float, sample_rate: float,
             order: int = 4, zero_phase: bool = True) -> np.ndarray:
    """
    Butterworth bandpass

    Args:
        series: Samples
        f_lo: Lower corner (Hz)
        f_hi: Upper corner (Hz)
        sample_rate: Hz
        order: Prototype order per pass
        zero_phase: Forward-backward application (no delay); False runs causally

    Raises:
        BandError: Unless 0 < f_lo < f_hi < Nyquist
    """
    series = _check_length(series)
    nyquist = sample_rate / 2.0
    if not 0.0 < f_lo < f_hi < nyquist:
        raise BandError(f"bandpass needs 0 < f_lo < f_hi < {nyquist:g} Hz, "
                        f"got [{f_lo:g}, {f_hi:g}]")
    sos = signal.butter(order, [f_lo, f_hi], btype="bandpass", fs=sample_rate,
                        output="sos")
    return _apply(sos, series, zero_phase)


def notch_harmonics(series: np.ndarray, f0: float, n_harmonics: int, width: float,
                    sample_rate: float, zero_phase: bool = True) -> np.ndarray:
    """
    Cascade of second-order notches at f0, 2 f0, ..., n f0

    Args:
        series: Samples
        f0: Fundamental (Hz), e.g. mains at 50 Hz
        n_harmonics: Number of harmonics to reject
        width: -3 dB width of each notch (Hz)
        sample_rate: Hz
        zero_phase: Forward-backward application

    Raises:
        BandError: If n_harmonics * f0 reaches Nyquist
    """
    series = _check_length(series)
    if n_harmonics < 1:
        return series.copy()
    if width <= 0 or f0 <= 0:
        raise BandError("notch needs f0 > 0 and width > 0")
    if n_harmonics * f0 >= sample_rate / 2.0:
        raise BandError(f"harmonic {n_harmonics} of {f0:g} Hz reaches Nyquist "
                        f"({sample_rate / 2.0:g} Hz)")
    sections = []
    for k in range(1, n_harmonics + 1):
        center = k * f0
        b, a = signal.iirnotch(center, center / width, fs=sample_rate)
        sections.append(signal.tf2sos(b, a))
    return _apply(np.vstack(sections), series, zero_phase)


def lowpass(series: np.ndarray, fc: float, sample_rate: float, order: int = 4,
            zero_phase: bool = True) -> np.ndarray:
    """
    Maximally flat lowpass with its -3 dB point at fc

    ``order`` is the order of the overall magnitude response. Zero-phase runs use a
    half-order section applied twice with the corner moved out so the combined
    response still crosses -3 dB at fc.

    Raises:
        BandError: Unless 0 < fc < Nyquist
    """
    series = _check_length(series)
    nyquist = sample_rate / 2.0
    if not 0.0 < fc < nyquist:
        raise BandError(f"lowpass needs 0 < fc < {nyquist:g} Hz, got {fc:g}")
    if zero_phase:
        half = max(order // 2, 1)
        corner = fc / (np.sqrt(2.0) - 1.0) ** (1.0 / (2.0 * half))
        corner = min(corner, 0.99 * nyquist)
        sos = signal.butter(half, corner, btype="lowpass", fs=sample_rate, output="sos")
        return signal.sosfiltfilt(sos, series)
    sos = signal.butter(order, fc, btype="lowpass", fs=sample_rate, output="sos")
    return signal.sosfilt(sos, series)


def analytic_signal(series: np.ndarray) -> np.ndarray:
    """Analytic signal x + i H[x] (negative-frequency content removed)"""
    return signal.hilbert(_check_length(series))


def crossing_times(series: np.ndarray, sample_rate: float) -> np.ndarray:
    """Zero-crossing times (s), rising and falling, linearly interpolated"""
    series = np.asarray(series, dtype=float)
    positive = series >= 0
    index = np.flatnonzero(positive[1:] != positive[:-1])
    left = series[index]
    right = series[index + 1]
    fraction = left / (left - right)
    return (index + fraction) / sample_rate


def count_zero_crossings(series: np.ndarray, sample_rate: float) -> np.ndarray:
    """
    Instantaneous frequency from zero-crossing intervals

    Each pair of adjacent crossings (half a period apart) gives f = 1 / (2 dt),
    placed at the interval midpoint and interpolated back onto the sample times.

    Raises:
        NoCrossingsError: If fewer than two crossings exist
    """
    times = crossing_times(series, sample_rate)
    if times.size < 2:
        raise NoCrossingsError(f"found {times.size} zero crossings, need at least 2")
    intervals = np.diff(times)
    midpoints = (times[1:] + times[:-1]) / 2.0
    frequency = 1.0 / (2.0 * intervals)
    sample_times = np.arange(len(series)) / sample_rate
    return np.interp(sample_times, midpoints, frequency)


def bin_edges(length: int, n_bins: int) -> np.ndarray:
    """Start indices of equal-width bins plus the end; the last bin takes the remainder"""
    if length < 1:
        raise LengthError("cannot bin an empty series")
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    if n_bins > length:
        raise LengthError(f"{n_bins} bins exceed series length {length}")
    width = length // n_bins
    edges = np.arange(n_bins + 1) * width
    edges[-1] = length
    return edges


def bin_average(series: np.ndarray, n_bins: int) -> np.ndarray:
    """
    Means over equal-width contiguous bins

    Raises:
        LengthError: On empty input or more bins than samples
    """
    series = np.asarray(series, dtype=float)
    edges = bin_edges(series.size, n_bins)
    sums = np.add.reduceat(series, edges[:-1])
    return sums / np.diff(edges)


def decimate(series: np.ndarray, factor: int) -> np.ndarray:
    """Integer-factor decimation with a zero-phase anti-alias FIR"""
    if int(factor) != factor or factor < 1:
        raise ConfigError(f"decimation factor must be a positive integer, got {factor}")
    if factor == 1:
        return np.asarray(series, dtype=float).copy()
    return signal.decimate(_check_length(series), int(factor), ftype="fir",
                           zero_phase=True)


def fft_grid(length: int, sample_rate: float) -> np.ndarray:
    """Non-negative frequencies (Hz) of a real FFT of ``length`` samples"""
    return np.fft.rfftfreq(length, d=1.0 / sample_rate)


def check_grid(frequencies: np.ndarray, length: int, sample_rate: float) -> None:
    """
    Raise GridMismatchError unless ``frequencies`` is the real-FFT grid of the data
    """
    expected = fft_grid(length, sample_rate)
    frequencies = np.asarray(frequencies, dtype=float)
    if frequencies.shape != expected.shape or not np.allclose(
            frequencies, expected, rtol=0.0, atol=1e-9 * sample_rate):
        raise GridMismatchError(
            f"filter grid ({frequencies.size} bins) does not match the data grid "
            f"({expected.size} bins at {sample_rate / length:g} Hz)")
