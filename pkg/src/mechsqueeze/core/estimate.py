"""
Conditional state estimation

Applies the causal filters to the measured quadrature, forms residual spectra,
integrates the conditional covariance over a band, or over the full band against the
true state, and reports the squeeze ellipse and purity. Purity sweeps re-synthesize
the filter with perturbed noise parameters.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from ..errors import (BelowVacuumWarning, DomainError, GridMismatchError, LengthError,
                      NumericalError)
from ..utils.helpers import TWO_PI
from . import dsp
from .langevin import StateSpaceModel
from .params import SystemParams
from .wiener import FilterResponse, ModifiedSusceptibility, modified_susceptibility, synthesize

logger = logging.getLogger(__name__)

DEFAULT_F_LO = 105.0
DEFAULT_RESOLUTION = 10.0
ELLIPSE_POINTS = 64
EDGE_TRIM_S = 0.1
FULL_BAND_DECADES = 4.0
FULL_BAND_LINEAR_POINTS = 200000
FULL_BAND_TAIL_POINTS = 2001
RESIDUAL_REFERENCES = ("measured", "truth")


@dataclass(frozen=True)
class NotchSpec:
    """Mains-harmonic notch applied before conditioning"""

    f0: float = 50.0
    n_harmonics: int = 6
    width: float = 2.0


def _minor_axis_angle(vector: np.ndarray) -> float:
    """Clockwise angle (deg) of an axis from +q, folded into (-90, 90]"""
    angle = -math.degrees(math.atan2(vector[1], vector[0]))
    while angle <= -90.0:
        angle += 180.0
    while angle > 90.0:
        angle -= 180.0
    return angle


@dataclass
class ConditionalState:
    """
    Conditional covariance in zero-point units and its ellipse

    ``angle`` is the minor (squeezed) axis measured clockwise from +q, in degrees.
    ``below_vacuum`` marks states violating V >= identity; they are reported as is.
    """

    V: np.ndarray
    squeeze_var: float
    antisqueeze_var: float
    angle: float
    purity: float
    below_vacuum: bool = False
    band: Optional[Tuple[float, float]] = None
    minor_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))

    @classmethod
    def from_covariance(cls, V: Any, band: Optional[Tuple[float, float]] = None
                        ) -> "ConditionalState":
        """
        Eigen-decompose a 2x2 covariance

        Raises:
            DomainError: If V is not positive definite
        """
        V = np.asarray(V, dtype=float)
        if V.shape != (2, 2):
            raise LengthError(f"covariance must be 2x2, got {V.shape}")
        V = (V + V.T) / 2.0
        values, vectors = np.linalg.eigh(V)
        if values[0] <= 0:
            raise DomainError(f"covariance is not positive definite (eigenvalues {values})")
        scale = max(abs(values[1]), 1.0)
        if abs(values[1] - values[0]) <= 1e-12 * scale:
            angle = 0.0
            minor = np.array([1.0, 0.0])
        else:
            minor = vectors[:, 0]
            angle = _minor_axis_angle(minor)
        purity = 1.0 / math.sqrt(float(np.linalg.det(V)))
        below = bool(values[0] < 1.0 - 1e-12)
        if below:
            message = (f"conditional state below the vacuum bound "
                       f"(smallest variance {values[0]:.4g} < 1)")
            logger.warning(message)
            warnings.warn(message, BelowVacuumWarning, stacklevel=2)
        return cls(V=V, squeeze_var=float(values[0]), antisqueeze_var=float(values[1]),
                   angle=angle, purity=purity, below_vacuum=below, band=band,
                   minor_axis=minor)

    @property
    def squeeze_amplitude(self) -> float:
        return math.sqrt(self.squeeze_var)

    @property
    def antisqueeze_amplitude(self) -> float:
        return math.sqrt(self.antisqueeze_var)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "V": self.V.tolist(),
            "squeeze_var": self.squeeze_var,
            "antisqueeze_var": self.antisqueeze_var,
            "squeeze_amplitude": self.squeeze_amplitude,
            "antisqueeze_amplitude": self.antisqueeze_amplitude,
            "angle_deg": self.angle,
            "purity": self.purity,
            "below_vacuum": self.below_vacuum,
            "band_hz": list(self.band) if self.band else None,
        }


def rotate_covariance(V: Any, angle_deg: float) -> np.ndarray:
    """Rotate a covariance clockwise by ``angle_deg`` (the reported angle shifts by it)"""
    theta = math.radians(angle_deg)
    rotation = np.array([[math.cos(theta), math.sin(theta)],
                         [-math.sin(theta), math.cos(theta)]])
    return rotation @ np.asarray(V, dtype=float) @ rotation.T


@dataclass
class Residuals:
    """Residual quadratures (reference minus filter prediction), zero-point units"""

    q: np.ndarray
    p: np.ndarray
    q_hat: np.ndarray
    p_hat: np.ndarray
    sample_rate: float
    reference: str = "measured"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": np.arange(self.q.size) / self.sample_rate,
            "q_res": self.q,
            "p_res": self.p,
            "q_hat": self.q_hat,
            "p_hat": self.p_hat,
        })


def _apply_response(analytic_spectrum: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Real output of a filter sampled on the non-negative FFT bins"""
    full = np.zeros(analytic_spectrum.size, dtype=complex)
    full[:response.size] = np.conj(response)
    return np.real(np.fft.ifft(analytic_spectrum * full))


def measured_quadratures(measured: np.ndarray, sample_rate: float, position_gain: float,
                         omega_m: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Position X / c and momentum dq/dt / omega_m implied by the measured quadrature

    Raises:
        DomainError: If the position gain is zero
    """
    if position_gain == 0:
        raise DomainError("position gain is zero; the measurement carries no position")
    measured = np.asarray(measured, dtype=float)
    q_meas = measured / position_gain
    omega = TWO_PI * dsp.fft_grid(measured.size, sample_rate)
    # numpy's kernel is conjugate, so d/dt is +i omega here
    p_meas = np.fft.irfft(np.fft.rfft(q_meas) * (1j * omega / omega_m), n=measured.size)
    return q_meas, p_meas


def condition(measured: np.ndarray, filters: FilterResponse, sample_rate: float,
              position_gain: float, omega_m: float,
              truth: Optional[Tuple[np.ndarray, np.ndarray]] = None,
              notch: Optional[NotchSpec] = None) -> Residuals:
    """
    Subtract the causal filter prediction from the calibrated signal

    The measured quadrature is turned into its analytic signal, transformed,
    multiplied by H_q and H_p and transformed back to give (q_hat, p_hat).

    Args:
        measured: Detected amplitude quadrature X
        filters: Filters on the real-FFT grid of the data
        sample_rate: Hz
        position_gain: Coefficient c of q in X
        omega_m: Confined frequency (rad/s), for the momentum reference
        truth: Optional simulator (q, p); residuals are then true estimation errors
        notch: Optional causal mains notch applied first

    Raises:
        GridMismatchError: If the filter grid is not the data grid
    """
    measured = np.asarray(measured, dtype=float)
    dsp.check_grid(filters.frequencies, measured.size, sample_rate)
    if notch is not None:
        measured = dsp.notch_harmonics(measured, notch.f0, notch.n_harmonics, notch.width,
                                       sample_rate, zero_phase=False)
    spectrum = np.fft.fft(dsp.analytic_signal(measured))
    q_hat = _apply_response(spectrum, filters.H_q)
    p_hat = _apply_response(spectrum, filters.H_p)

    if truth is not None:
        q_ref, p_ref = (np.asarray(series, dtype=float) for series in truth)
        if q_ref.shape != measured.shape or p_ref.shape != measured.shape:
            raise LengthError("truth series must match the measured series")
        reference = "truth"
    else:
        q_ref, p_ref = measured_quadratures(measured, sample_rate, position_gain, omega_m)
        reference = "measured"
    return Residuals(q=q_ref - q_hat, p=p_ref - p_hat, q_hat=q_hat, p_hat=p_hat,
                     sample_rate=sample_rate, reference=reference)


def covariance_from_spectra(S_qq: dsp.Spectrum, S_pp: dsp.Spectrum, S_qp: dsp.Spectrum,
                            band: Tuple[float, float]) -> ConditionalState:
    """
    Integrate residual spectra over a band into a conditional state

    Diagonal entries integrate the PSDs, the off-diagonal the cospectrum.

    Raises:
        GridMismatchError: If the spectra are on different grids
        BandError: If the band leaves the grid
    """
    if not (S_qq.same_grid(S_pp) and S_qq.same_grid(S_qp)):
        raise GridMismatchError("residual spectra are on different grids")
    f_lo, f_hi = band
    V_qq = S_qq.integrate(f_lo, f_hi)
    V_pp = S_pp.integrate(f_lo, f_hi)
    V_qp = S_qp.integrate(f_lo, f_hi)
    return ConditionalState.from_covariance([[V_qq, V_qp], [V_qp, V_pp]], (f_lo, f_hi))


@dataclass
class ResidualAnalysis:
    state: ConditionalState
    S_qq: dsp.Spectrum
    S_pp: dsp.Spectrum
    S_qp: dsp.Spectrum

    def spectra_frame(self) -> pd.DataFrame:
        """Columns f_hz, S_qq, S_pp, co_qp, quad_qp"""
        return pd.DataFrame({
            "f_hz": self.S_qq.frequencies,
            "S_qq": self.S_qq.values,
            "S_pp": self.S_pp.values,
            "co_qp": self.S_qp.cospectrum,
            "quad_qp": self.S_qp.quadspectrum,
        })


def residual_spectra(residuals: Residuals, resolution: float = DEFAULT_RESOLUTION,
                     window: str = "hann") -> Tuple[dsp.Spectrum, dsp.Spectrum, dsp.Spectrum]:
    """Welch PSDs of q and p residuals and their cross spectrum"""
    fs = residuals.sample_rate
    S_qq = dsp.psd_welch(residuals.q, fs, resolution=resolution, window=window)
    S_pp = dsp.psd_welch(residuals.p, fs, resolution=resolution, window=window)
    S_qp = dsp.cross_spectrum(residuals.q, residuals.p, fs, resolution=resolution,
                              window=window)
    return S_qq, S_pp, S_qp


def residual_state(residuals: Residuals, band: Tuple[float, float],
                   resolution: float = DEFAULT_RESOLUTION,
                   window: str = "hann") -> ResidualAnalysis:
    """Welch spectra of the residuals integrated over ``band``"""
    S_qq, S_pp, S_qp = residual_spectra(residuals, resolution, window)
    state = covariance_from_spectra(S_qq, S_pp, S_qp, band)
    return ResidualAnalysis(state, S_qq, S_pp, S_qp)


def residual_covariance(residuals: Residuals, trim: float = EDGE_TRIM_S) -> ConditionalState:
    """
    Full-band conditional state: sample covariance of the residual series

    ``trim`` seconds are dropped at both ends, where the circular filtering wraps.

    Raises:
        LengthError: If fewer than two samples survive the trim
    """
    edge = int(round(trim * residuals.sample_rate))
    stop = residuals.q.size - edge
    if stop - edge < 2:
        raise LengthError(f"record too short to drop {trim:g} s at both ends")
    V = np.cov(np.vstack([residuals.q[edge:stop], residuals.p[edge:stop]]))
    return ConditionalState.from_covariance(V, (0.0, residuals.sample_rate / 2.0))


def default_band(params: SystemParams,
                 susceptibility: Optional[ModifiedSusceptibility] = None,
                 f_lo: float = DEFAULT_F_LO) -> Tuple[float, float]:
    """Integration band [f_lo, (omega' + gamma') / 2 pi] in Hz"""
    susceptibility = susceptibility or modified_susceptibility(params)
    return f_lo, (susceptibility.omega_prime + susceptibility.gamma_prime) / TWO_PI


def residual_transfer(model: StateSpaceModel, filters: FilterResponse,
                      reference: str = "truth") -> np.ndarray:
    """
    Transfer matrices (n, 2, 3) from the inputs (p_in, x_in, y_in) to the residuals

    Raises:
        DomainError: For a measured reference on a model without position gain
    """
    if reference not in RESIDUAL_REFERENCES:
        raise ValueError(f"reference must be one of {RESIDUAL_REFERENCES}")
    omega = TWO_PI * filters.frequencies
    count = omega.size
    resolvent = -1j * omega[:, None, None] * np.eye(2) - model.drift
    state = np.linalg.solve(resolvent, np.broadcast_to(model.noise_map, (count, 2, 3)))
    measured = model.measurement_row[0] @ state + model.feedthrough[0]
    H = np.stack([filters.H_q, filters.H_p], axis=1)
    if reference == "truth":
        return state - H[:, :, None] * measured[:, None, :]
    gain = model.position_gain
    if gain == 0:
        raise DomainError("position gain is zero; no measured reference exists")
    calibration = np.stack([np.ones(count), -1j * omega / model.omega_m], axis=1) / gain
    return (calibration - H)[:, :, None] * measured[:, None, :]


def full_band_grid(model: StateSpaceModel,
                   decades: float = FULL_BAND_DECADES) -> np.ndarray:
    """
    Frequencies (Hz) for full-band integration

    Linear from 0 Hz to twenty times the mechanical frequency with a step of a
    twentieth of the mechanical linewidth (at most FULL_BAND_LINEAR_POINTS bins),
    then geometric for ``decades`` more.

    Raises:
        DomainError: If the model has no mechanical damping
    """
    linewidth = model.gamma_m / TWO_PI
    if not linewidth > 0:
        raise DomainError("full-band grid needs gamma_m > 0")
    f_lin = 20.0 * abs(model.omega_m) / TWO_PI
    step = min(1.0, max(linewidth / 20.0, f_lin / FULL_BAND_LINEAR_POINTS))
    linear = np.arange(0.0, f_lin, step)
    tail = np.geomspace(f_lin, f_lin * 10.0 ** decades, FULL_BAND_TAIL_POINTS)
    return np.concatenate([linear, tail])


def predicted_state(model: StateSpaceModel, filters: FilterResponse,
                    band: Optional[Tuple[float, float]], reference: str = "truth"
                    ) -> ConditionalState:
    """
    Exact conditional covariance of a filter applied to the model

    Integrates 2 Re(E S E^dagger) over the band, E being the residual transfer
    matrix; the filters must be sampled on a grid spanning the band. With
    ``band=None`` the whole grid is integrated and the 1/f^2 tail beyond its last
    bin is added, giving the full-band estimation error.

    Raises:
        DomainError: For a full band with the measured reference (its momentum
            residual is not integrable), or a band holding fewer than two bins
    """
    if band is None:
        if reference != "truth":
            raise DomainError("full-band integration needs the truth reference")
        subset = filters
    else:
        f_lo, f_hi = band
        mask = (filters.frequencies >= f_lo) & (filters.frequencies <= f_hi)
        if mask.sum() < 2:
            raise DomainError(f"filter grid holds fewer than two bins in "
                              f"[{f_lo:g}, {f_hi:g}] Hz")
        subset = FilterResponse(filters.frequencies[mask], filters.H_q[mask],
                                filters.H_p[mask], filters.source)
    transfer = residual_transfer(model, subset, reference)
    density = np.einsum("nij,jk,nlk->nil", transfer, model.input_psd, transfer.conj())
    V = 2.0 * trapezoid(density.real, subset.frequencies, axis=0)
    if band is None:
        V += 2.0 * density[-1].real * subset.frequencies[-1]
        band = (float(subset.frequencies[0]), float(subset.frequencies[-1]))
    return ConditionalState.from_covariance(V, band)


def ellipse_boundary(state: ConditionalState, points: int = ELLIPSE_POINTS) -> pd.DataFrame:
    """One-sigma ellipse boundary samples (q, p)"""
    values, vectors = np.linalg.eigh(state.V)
    t = np.linspace(0.0, TWO_PI, points, endpoint=False)
    unit = np.vstack([np.cos(t), np.sin(t)])
    boundary = vectors @ (np.sqrt(values)[:, None] * unit)
    return pd.DataFrame({"q": boundary[0], "p": boundary[1]})


def ellipse_report(state: ConditionalState, points: int = ELLIPSE_POINTS) -> Dict[str, Any]:
    """
    Squeeze ellipse summary

    Variances (eigenvalues) and amplitudes (their square roots) are both reported,
    labelled, plus ``points`` boundary samples.
    """
    boundary = ellipse_boundary(state, points)
    return {
        "squeeze_var": state.squeeze_var,
        "antisqueeze_var": state.antisqueeze_var,
        "squeeze_amplitude": state.squeeze_amplitude,
        "antisqueeze_amplitude": state.antisqueeze_amplitude,
        "angle_deg": state.angle,
        "purity": state.purity,
        "below_vacuum": state.below_vacuum,
        "boundary": boundary,
    }


def band_sensitivity(S_qq: dsp.Spectrum, S_pp: dsp.Spectrum, S_qp: dsp.Spectrum,
                     f_hi: float, f_lo_values: Optional[Iterable[float]] = None
                     ) -> pd.DataFrame:
    """Purity as the lower band edge moves (default 50-200 Hz in 10 Hz steps)"""
    if f_lo_values is None:
        f_lo_values = np.arange(50.0, 200.0 + 1e-9, 10.0)
    rows = []
    for f_lo in f_lo_values:
        try:
            state = covariance_from_spectra(S_qq, S_pp, S_qp, (float(f_lo), f_hi))
            rows.append({"f_lo_hz": float(f_lo), "purity": state.purity,
                         "squeeze_var": state.squeeze_var})
        except NumericalError as exc:
            logger.warning("Band sensitivity at f_lo = %g Hz failed: %s", f_lo, exc)
            rows.append({"f_lo_hz": float(f_lo), "purity": math.nan,
                         "squeeze_var": math.nan})
    return pd.DataFrame(rows)


class ModelEvaluator:
    """
    Purity of filters built from trial parameters, evaluated exactly on a model

    ``band=None`` scores the full-band estimation error against the true state,
    the quantity the causal MMSE filter of the model minimizes.
    """

    def __init__(self, model: StateSpaceModel, band: Optional[Tuple[float, float]] = None,
                 source: str = "analytic", reference: str = "truth",
                 resolution: float = 1.0):
        if band is None and reference != "truth":
            raise ValueError("full-band evaluation needs the truth reference")
        self.model = model
        self.band = band
        self.source = source
        self.reference = reference
        if band is None:
            self.grid = full_band_grid(model)
        else:
            self.grid = np.arange(band[0], band[1] + resolution / 2.0, resolution)

    def __call__(self, filter_params: SystemParams) -> ConditionalState:
        filters = synthesize(filter_params, self.grid, self.source)
        return predicted_state(self.model, filters, self.band, self.reference)


class DataEvaluator:
    """
    Purity of filters built from trial parameters, applied to a recorded series

    With ``band=None`` the state is the sample covariance of the residuals against
    the simulator truth, which must then be given.
    """

    def __init__(self, measured: np.ndarray, sample_rate: float,
                 band: Optional[Tuple[float, float]], position_gain: float, omega_m: float,
                 source: str = "analytic",
                 truth: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                 resolution: float = DEFAULT_RESOLUTION, notch: Optional[NotchSpec] = None):
        if band is None and truth is None:
            raise ValueError("full-band evaluation needs the true (q, p) series")
        self.measured = np.asarray(measured, dtype=float)
        self.sample_rate = sample_rate
        self.band = band
        self.position_gain = position_gain
        self.omega_m = omega_m
        self.source = source
        self.truth = truth
        self.resolution = resolution
        self.notch = notch
        self.grid = dsp.fft_grid(self.measured.size, sample_rate)

    def __call__(self, filter_params: SystemParams) -> ConditionalState:
        filters = synthesize(filter_params, self.grid, self.source)
        residuals = condition(self.measured, filters, self.sample_rate, self.position_gain,
                              self.omega_m, truth=self.truth, notch=self.notch)
        if self.band is None:
            return residual_covariance(residuals)
        return residual_state(residuals, self.band, self.resolution).state


@dataclass
class SweepResult:
    """
    Purity over perturbed noise parameters

    ``argmax`` is (n_th, N_th) of the best point; in cross mode each coordinate is
    the maximum along its own axis.
    """

    frame: pd.DataFrame
    mode: str
    argmax: Tuple[float, float]
    baseline_purity: float
    identified: Tuple[float, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "argmax_n_th": self.argmax[0],
            "argmax_N_th": self.argmax[1],
            "identified_n_th": self.identified[0],
            "identified_N_th": self.identified[1],
            "baseline_purity": self.baseline_purity,
            "points": int(len(self.frame)),
            "failed_points": int(self.frame["error"].notna().sum()),
        }


def _sweep_points(n_th_grid: Sequence[float], N_th_grid: Sequence[float],
                  identified: Tuple[float, float], mode: str) -> List[Tuple[str, float, float]]:
    n0, N0 = identified
    if mode == "grid":
        return [("grid", float(n), float(N)) for n in n_th_grid for N in N_th_grid]
    if mode == "cross":
        return ([("n_th", float(n), N0) for n in n_th_grid]
                + [("N_th", n0, float(N)) for N in N_th_grid])
    raise ValueError("sweep mode must be 'cross' or 'grid'")


def purity_sweep(params: SystemParams, evaluator: Callable[[SystemParams], ConditionalState],
                 n_th_grid: Sequence[float], N_th_grid: Sequence[float],
                 mode: str = "cross") -> SweepResult:
    """
    Re-synthesize the filter at each noise point and record the purity

    Args:
        params: Identified parameter set (the filter baseline)
        evaluator: Maps trial parameters to a ConditionalState (ModelEvaluator or
            DataEvaluator)
        n_th_grid: Phonon occupancies to try
        N_th_grid: Optical noise occupancies to try
        mode: "cross" varies one parameter at a time, "grid" covers the surface

    Returns:
        SweepResult; failing points carry NaN purity and the error text
    """
    identified = (params.n_th, params.N_th)
    baseline = evaluator(params).purity
    rows = []
    for axis, n_th, N_th in _sweep_points(n_th_grid, N_th_grid, identified, mode):
        row: Dict[str, Any] = {"axis": axis, "n_th": n_th, "N_th": N_th,
                               "purity": math.nan, "error": None}
        try:
            row["purity"] = evaluator(params.with_noise(n_th=n_th, N_th=N_th)).purity
        except NumericalError as exc:
            logger.warning("Sweep point n_th=%.4g N_th=%.4g failed: %s", n_th, N_th, exc)
            row["error"] = str(exc)
        rows.append(row)
    frame = pd.DataFrame(rows, columns=["axis", "n_th", "N_th", "purity", "error"])

    def best(subset: pd.DataFrame, column: str, fallback: float) -> float:
        valid = subset.dropna(subset=["purity"])
        if valid.empty:
            return fallback
        return float(valid.loc[valid["purity"].idxmax(), column])

    if mode == "cross":
        argmax = (best(frame[frame["axis"] == "n_th"], "n_th", identified[0]),
                  best(frame[frame["axis"] == "N_th"], "N_th", identified[1]))
    else:
        valid = frame.dropna(subset=["purity"])
        if valid.empty:
            argmax = identified
        else:
            top = valid.loc[valid["purity"].idxmax()]
            argmax = (float(top["n_th"]), float(top["N_th"]))
    logger.info("Purity sweep (%s): maximum at n_th=%.4g, N_th=%.4g", mode, *argmax)
    return SweepResult(frame=frame, mode=mode, argmax=argmax, baseline_purity=baseline,
                       identified=identified)
