"""
Causal Wiener filters for position and momentum

Closed-form filters from the modified susceptibility, plus an independent oracle:
the steady-state continuous Kalman estimator of the same model, whose transfer
functions are the causal MMSE filters. Fourier kernel is e^{+i omega t}, so causal
responses have their poles in the lower half-plane.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, solve_continuous_are

from ..errors import (ConvergenceError, DetectabilityError, DomainError, LengthError,
                      PoleError)
from ..utils.helpers import TWO_PI, rad_to_hz
from .langevin import StateSpaceModel, build_model
from .params import SystemParams

logger = logging.getLogger(__name__)

FILTER_SOURCES = ("analytic", "oracle")


@dataclass(frozen=True)
class ModifiedSusceptibility:
    """Resonance and linewidth of the conditioned oscillator (rad/s)"""

    omega_prime: float
    gamma_prime: float

    @property
    def omega_prime_hz(self) -> float:
        return rad_to_hz(self.omega_prime)

    @property
    def gamma_prime_hz(self) -> float:
        return rad_to_hz(self.gamma_prime)

    def chi(self, omega: Any) -> Any:
        """chi'(omega) = 1 / (omega'^2 - omega^2 - i omega gamma')"""
        omega = np.asarray(omega, dtype=float)
        return 1.0 / (self.omega_prime ** 2 - omega ** 2 - 1j * omega * self.gamma_prime)


@dataclass(frozen=True)
class FilterCoefficients:
    A: float
    B: float


@dataclass
class KalmanSolution:
    """
    Steady-state causal estimator of a StateSpaceModel

    ``covariance`` is the conditional (estimation error) covariance. The closed loop
    written as A (1 - i B omega) chi'(omega) gives directly comparable
    (omega', gamma', A, B).
    """

    gain: np.ndarray
    covariance: np.ndarray
    closed_loop: np.ndarray
    susceptibility: ModifiedSusceptibility
    coefficients: FilterCoefficients

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gain": self.gain.tolist(),
            "conditional_covariance": self.covariance.tolist(),
            "omega_prime_hz": self.susceptibility.omega_prime_hz,
            "gamma_prime_hz": self.susceptibility.gamma_prime_hz,
            "A": self.coefficients.A,
            "B_s": self.coefficients.B,
        }


@dataclass
class FilterResponse:
    """Frequency-sampled transfer functions from X to (q, p)"""

    frequencies: np.ndarray
    H_q: np.ndarray
    H_p: np.ndarray
    source: str = "analytic"
    susceptibility: Optional[ModifiedSusceptibility] = None
    coefficients: Optional[FilterCoefficients] = None

    def __post_init__(self) -> None:
        if self.source not in FILTER_SOURCES:
            raise ValueError(f"source must be one of {FILTER_SOURCES}")
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.H_q = np.asarray(self.H_q, dtype=complex)
        self.H_p = np.asarray(self.H_p, dtype=complex)
        if not (self.frequencies.shape == self.H_q.shape == self.H_p.shape):
            raise LengthError("frequency grid and filter samples differ in length")

    @classmethod
    def zeros(cls, frequencies: np.ndarray) -> "FilterResponse":
        frequencies = np.asarray(frequencies, dtype=float)
        empty = np.zeros(frequencies.shape, dtype=complex)
        return cls(frequencies, empty, empty.copy())

    def to_frame(self) -> pd.DataFrame:
        """Columns f_hz, Hq_re, Hq_im, Hp_re, Hp_im"""
        return pd.DataFrame({
            "f_hz": self.frequencies,
            "Hq_re": self.H_q.real,
            "Hq_im": self.H_q.imag,
            "Hp_re": self.H_p.real,
            "Hp_im": self.H_p.imag,
        })


def modified_susceptibility(params: SystemParams) -> ModifiedSusceptibility:
    """
    Closed-form (omega', gamma') of the conditioned oscillator

    omega'^4 = 32 n_th C gamma_m^2 delta^2 omega_m^2 / N_th + (32 g_m^2 delta omega_m / kappa)^2
    gamma'^2 = 32 delta g_m^2 omega_m / kappa + 2 omega'^2

    Raises:
        DomainError: If N_th = 0 (the closed form has no vacuum limit) or delta < 0
    """
    if params.N_th <= 0:
        raise DomainError("closed-form susceptibility needs N_th > 0; use the "
                          "numerical oracle for vacuum optical noise")
    if params.delta < 0:
        raise DomainError("normalized detuning must be >= 0")
    omega = params.omega_m
    gamma = params.gamma_m
    delta = params.delta
    spring = 32.0 * params.g_m ** 2 * delta * omega / params.kappa
    thermal = (32.0 * params.n_th * params.derived.cooperativity * gamma ** 2
               * delta ** 2 * omega ** 2 / params.N_th)
    omega_prime = (thermal + spring ** 2) ** 0.25
    gamma_prime = math.sqrt(spring + 2.0 * omega_prime ** 2)
    return ModifiedSusceptibility(omega_prime, gamma_prime)


def filter_coefficients(params: SystemParams,
                        susceptibility: Optional[ModifiedSusceptibility] = None
                        ) -> FilterCoefficients:
    """
    Frequency-independent filter coefficients A and B

    Raises:
        PoleError: If omega' = omega_m
    """
    susceptibility = susceptibility or modified_susceptibility(params)
    omega = params.omega_m
    omega_prime_sq = susceptibility.omega_prime ** 2
    gap = omega_prime_sq - omega ** 2
    if abs(gap) <= 1e-12 * max(omega_prime_sq, omega ** 2):
        raise PoleError("omega' coincides with omega_m; conditioning is degenerate")
    B = (params.gamma_m + susceptibility.gamma_prime) / gap
    if params.delta == 0 or params.g_m == 0:
        # no position information in the amplitude quadrature
        return FilterCoefficients(0.0, B)
    noise_ratio = (2.0 * params.n_th + 1.0) / (2.0 * params.N_th + 1.0)
    weight = 8.0 * params.g_m ** 2 / params.kappa + params.gamma_m * noise_ratio
    A = (-16.0 * params.g_m * omega ** 2 * params.delta
         * math.sqrt(params.eta / params.kappa) * weight / omega_prime_sq)
    return FilterCoefficients(A, B)


def position_filter(params: SystemParams, frequencies_hz: Any,
                    susceptibility: Optional[ModifiedSusceptibility] = None,
                    coefficients: Optional[FilterCoefficients] = None) -> np.ndarray:
    """H_q(omega) = A (1 - i B omega) chi'(omega) sampled on a grid in Hz"""
    susceptibility = susceptibility or modified_susceptibility(params)
    coefficients = coefficients or filter_coefficients(params, susceptibility)
    omega = TWO_PI * np.asarray(frequencies_hz, dtype=float)
    if coefficients.A == 0:
        return np.zeros(omega.shape, dtype=complex)
    return coefficients.A * (1.0 - 1j * coefficients.B * omega) * susceptibility.chi(omega)


def momentum_filter(params: SystemParams, frequencies_hz: Any,
                    susceptibility: Optional[ModifiedSusceptibility] = None,
                    coefficients: Optional[FilterCoefficients] = None) -> np.ndarray:
    """
    H_p(omega) = -(A B / omega_m) (omega_m^2 + i omega (omega'^2 - omega_m^2) / (gamma' + gamma_m)) chi'(omega)
    """
    susceptibility = susceptibility or modified_susceptibility(params)
    coefficients = coefficients or filter_coefficients(params, susceptibility)
    omega_m = params.omega_m
    omega = TWO_PI * np.asarray(frequencies_hz, dtype=float)
    if coefficients.A == 0:
        return np.zeros(omega.shape, dtype=complex)
    slope = ((susceptibility.omega_prime ** 2 - omega_m ** 2)
             / (susceptibility.gamma_prime + params.gamma_m))
    prefactor = -coefficients.A * coefficients.B / omega_m
    return prefactor * (omega_m ** 2 + 1j * omega * slope) * susceptibility.chi(omega)


def analytic_filters(params: SystemParams, frequencies_hz: Any) -> FilterResponse:
    """Both closed-form filters on one grid"""
    susceptibility = modified_susceptibility(params)
    coefficients = filter_coefficients(params, susceptibility)
    return FilterResponse(
        frequencies=np.asarray(frequencies_hz, dtype=float),
        H_q=position_filter(params, frequencies_hz, susceptibility, coefficients),
        H_p=momentum_filter(params, frequencies_hz, susceptibility, coefficients),
        source="analytic",
        susceptibility=susceptibility,
        coefficients=coefficients,
    )


def kalman_solution(model: StateSpaceModel) -> KalmanSolution:
    """
    Steady-state continuous Kalman estimator with correlated process/measurement noise

    Solves F P + P F^T - (P c^T + N) R^-1 (c P + N^T) + Q = 0 for the conditional
    covariance P, with Q = L S L^T, R = D S D^T and N = L S D^T.

    Raises:
        DetectabilityError: If X carries no position information or R = 0
        ConvergenceError: If no stabilizing solution is found
    """
    c = model.measurement_row
    R = model.measurement_noise
    if not np.any(c != 0):
        raise DetectabilityError("measurement row is zero (g_m * delta = 0): the state "
                                 "is not observable")
    if R <= 0:
        raise DetectabilityError("measurement noise is zero; the estimator is singular")

    process = model.process_noise
    process = (process + process.T) / 2.0
    cross = model.cross_noise
    try:
        covariance = solve_continuous_are(model.drift.T, c.T, process, np.array([[R]]),
                                          s=cross)
    except (LinAlgError, ValueError) as exc:
        raise ConvergenceError(f"Riccati solve failed: {exc}") from exc
    covariance = (covariance + covariance.T) / 2.0
    gain = ((covariance @ c.T + cross) / R)[:, 0]
    closed_loop = model.drift - np.outer(gain, c[0])
    if np.any(np.linalg.eigvals(closed_loop).real >= 0):
        raise ConvergenceError("Riccati solution does not stabilize the estimator")
    if np.any(np.linalg.eigvalsh(covariance) < -1e-9 * np.abs(covariance).max()):
        raise ConvergenceError("Riccati solution is not positive semidefinite")

    gamma_prime = -float(np.trace(closed_loop))
    omega_prime = math.sqrt(max(float(np.linalg.det(closed_loop)), 0.0))
    omega_m = model.omega_m
    gamma_m = model.gamma_m
    A = gamma_m * gain[0] + omega_m * gain[1]
    B = gain[0] / A if A != 0 else 0.0
    return KalmanSolution(
        gain=gain,
        covariance=covariance,
        closed_loop=closed_loop,
        susceptibility=ModifiedSusceptibility(omega_prime, gamma_prime),
        coefficients=FilterCoefficients(A, B),
    )


def numerical_causal_wiener(model: StateSpaceModel, frequencies_hz: Any,
                            solution: Optional[KalmanSolution] = None) -> FilterResponse:
    """
    Causal MMSE filters X -> (q, p) from the steady-state estimator

    H(omega) = (-i omega I - F + K c)^-1 K

    Returns:
        FilterResponse with source "oracle"
    """
    solution = solution or kalman_solution(model)
    frequencies = np.asarray(frequencies_hz, dtype=float)
    omega = TWO_PI * frequencies
    closed = solution.closed_loop
    gain = solution.gain
    # explicit 2x2 inverse: adj(M) K / det(M), M = -i omega I - closed
    m00 = -1j * omega - closed[0, 0]
    m01 = -closed[0, 1] * np.ones_like(omega)
    m10 = -closed[1, 0] * np.ones_like(omega)
    m11 = -1j * omega - closed[1, 1]
    det = m00 * m11 - m01 * m10
    H_q = (m11 * gain[0] - m01 * gain[1]) / det
    H_p = (-m10 * gain[0] + m00 * gain[1]) / det
    logger.debug("Oracle filter: omega'/2pi = %.4g Hz, gamma'/2pi = %.4g Hz",
                 solution.susceptibility.omega_prime_hz,
                 solution.susceptibility.gamma_prime_hz)
    return FilterResponse(
        frequencies=frequencies,
        H_q=H_q,
        H_p=H_p,
        source="oracle",
        susceptibility=solution.susceptibility,
        coefficients=solution.coefficients,
    )


def _check_rfft_grid(frequencies: np.ndarray) -> float:
    if frequencies.size < 3 or frequencies[0] != 0:
        raise LengthError("impulse response needs a uniform grid starting at 0 Hz")
    spacing = np.diff(frequencies)
    if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0.0):
        raise LengthError("impulse response needs a uniform frequency grid")
    return float(spacing[0])


def causal_regularizer(frequencies_hz: Any, corner_hz: float, order: int = 3) -> np.ndarray:
    """Causal low-pass (1 - i omega / omega_c)^-order"""
    ratio = np.asarray(frequencies_hz, dtype=float) / corner_hz
    return (1.0 - 1j * ratio) ** (-order)


def impulse_response(frequencies_hz: np.ndarray, response: np.ndarray
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """
    Impulse response (1/s) from samples on a grid 0, df, ..., f_max

    The response is periodic over 1/df; the second half is returned as negative
    times, so the output runs from -T/2 to T/2.
    """
    frequencies = np.asarray(frequencies_hz, dtype=float)
    spacing = _check_rfft_grid(frequencies)
    count = 2 * (frequencies.size - 1)
    # numpy's transform uses the conjugate kernel
    values = np.fft.irfft(np.conj(np.asarray(response, dtype=complex)), n=count)
    values *= count * spacing
    times = np.arange(count) / (count * spacing)
    period = 1.0 / spacing
    times = np.where(times >= period / 2.0, times - period, times)
    order = np.argsort(times, kind="stable")
    return times[order], values[order]


def causal_leakage(frequencies_hz: np.ndarray, response: np.ndarray,
                   corner_hz: Optional[float] = None, order: int = 3) -> float:
    """
    Fraction of impulse-response energy at negative times

    The response is first multiplied by a causal regularizing low-pass (corner at a
    tenth of the grid maximum by default) so band truncation of slowly decaying tails
    does not show up as leakage; a causal filter stays causal under the product.
    """
    frequencies = np.asarray(frequencies_hz, dtype=float)
    if corner_hz is None:
        corner_hz = frequencies[-1] / 10.0
    regularized = np.asarray(response, dtype=complex) * causal_regularizer(
        frequencies, corner_hz, order)
    times, values = impulse_response(frequencies, regularized)
    energy = values ** 2
    total = float(energy.sum())
    if total == 0:
        return 0.0
    return float(energy[times < 0].sum() / total)


def synthesize(params: SystemParams, frequencies_hz: Any, source: str = "analytic",
               model: Optional[StateSpaceModel] = None) -> FilterResponse:
    """
    Filters from either construction

    Args:
        params: Parameter set
        frequencies_hz: Grid (Hz)
        source: "analytic" or "oracle"
        model: State-space model for the oracle (built from params when omitted)
    """
    if source == "analytic":
        return analytic_filters(params, frequencies_hz)
    if source == "oracle":
        return numerical_causal_wiener(model or build_model(params), frequencies_hz)
    raise ValueError(f"source must be one of {FILTER_SOURCES}")
