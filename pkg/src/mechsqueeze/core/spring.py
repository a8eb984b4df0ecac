"""
Optical-spring identification

Resonance-vs-detuning curves and fits, laser-power compensation, the resonance
track produced by slow detuning drifts, and detuning estimation from counted
frequencies.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.optimize import brentq, least_squares, minimize_scalar

from ..errors import (ConfigError, ConvergenceError, DegenerateBinningError, DomainError,
                      LengthError, RankDeficiencyWarning)
from ..utils.helpers import TWO_PI
from . import dsp
from .params import SystemParams

logger = logging.getLogger(__name__)

RANK_CONDITION_LIMIT = 1e10
MAX_EVALUATIONS = 2000
# largest detuning searched when inverting the spring on the far branch
DELTA_SEARCH_LIMIT = 1e3


class FixedPhotonMap:
    """Circulating photon number independent of detuning and power"""

    name = "fixed"
    efficiency_sensitive = False

    def photons(self, delta: Any, params: SystemParams, power: Optional[float] = None,
                eta: Optional[float] = None) -> Any:
        return params.n_c * np.ones_like(np.asarray(delta, dtype=float))

    def log_derivatives(self, delta: Any, eta: float) -> Tuple[Any, float]:
        """(d ln n_c / d delta, d ln n_c / d eta)"""
        return np.zeros_like(np.asarray(delta, dtype=float)), 0.0


@dataclass(frozen=True)
class LorentzianPhotonMap:
    """
    Photon number following the cavity Lorentzian, n_c ~ P eta^e / (1 + 4 delta^2)

    Anchored at the parameter set's (delta, P, eta, n_c). A nonzero
    ``efficiency_exponent`` makes the map depend on the detection efficiency, which is
    what lets a spring fit constrain eta at all.
    """

    efficiency_exponent: float = 0.0
    name: str = "lorentzian"

    @property
    def efficiency_sensitive(self) -> bool:
        return self.efficiency_exponent != 0.0

    def photons(self, delta: Any, params: SystemParams, power: Optional[float] = None,
                eta: Optional[float] = None) -> Any:
        delta = np.asarray(delta, dtype=float)
        scale = (1.0 + 4.0 * params.delta ** 2) / (1.0 + 4.0 * delta ** 2)
        if power is not None and params.power > 0:
            scale = scale * power / params.power
        if eta is not None and self.efficiency_sensitive and params.eta > 0:
            scale = scale * (eta / params.eta) ** self.efficiency_exponent
        return params.n_c * scale

    def log_derivatives(self, delta: Any, eta: float) -> Tuple[Any, float]:
        delta = np.asarray(delta, dtype=float)
        d_eta = self.efficiency_exponent / eta if eta > 0 else 0.0
        return -8.0 * delta / (1.0 + 4.0 * delta ** 2), d_eta


PHOTON_MAPS = {
    "fixed": FixedPhotonMap,
    "lorentzian": LorentzianPhotonMap,
}


def photon_map_from_name(name: str, efficiency_exponent: float = 0.0):
    """Build a photon map from its configuration name"""
    if name not in PHOTON_MAPS:
        raise ConfigError(f"unknown photon map {name!r}; choose from {sorted(PHOTON_MAPS)}")
    if name == "lorentzian":
        return LorentzianPhotonMap(efficiency_exponent=efficiency_exponent)
    return FixedPhotonMap()


@dataclass(frozen=True)
class SpringMeasurement:
    """Resonance samples at known detuning offsets from the operating point"""

    detuning_samples: np.ndarray
    resonance_samples: np.ndarray
    resonance_errors: np.ndarray
    incident_power: float

    def __post_init__(self) -> None:
        lengths = {len(self.detuning_samples), len(self.resonance_samples),
                   len(self.resonance_errors)}
        if len(lengths) != 1:
            raise LengthError("detuning, resonance and error samples differ in length")
        if np.any(np.asarray(self.resonance_errors) <= 0):
            raise ConfigError("resonance errors must be > 0")


@dataclass
class FitResult:
    """
    Spring fit outcome

    ``parameter_covariance`` is ordered (G, eta, mean_delta); rows of parameters held
    fixed are zero.
    """

    G: float
    eta: float
    mean_delta: float
    residual_norm: float
    parameter_covariance: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    free_parameters: Tuple[str, ...] = ()
    evaluations: int = 0
    photon_map: str = "fixed"

    @property
    def errors(self) -> Dict[str, float]:
        sigma = np.sqrt(np.clip(np.diag(self.parameter_covariance), 0.0, None))
        return {"G": float(sigma[0]), "eta": float(sigma[1]), "mean_delta": float(sigma[2])}

    def to_dict(self) -> Dict[str, Any]:
        errors = self.errors
        return {
            "G_hz_per_m": self.G / TWO_PI,
            "G_hz_per_m_error": errors["G"] / TWO_PI,
            "eta": self.eta,
            "eta_error": errors["eta"],
            "mean_delta": self.mean_delta,
            "mean_delta_error": errors["mean_delta"],
            "residual_norm": self.residual_norm,
            "parameter_covariance": self.parameter_covariance.tolist(),
            "covariance_order": ["G", "eta", "mean_delta"],
            "residuals": self.residuals.tolist(),
            "free_parameters": list(self.free_parameters),
            "evaluations": self.evaluations,
            "photon_map": self.photon_map,
        }


def _resonance(delta: np.ndarray, G: float, photons: np.ndarray,
               params: SystemParams) -> np.ndarray:
    """Spring resonance (rad/s) with negative detunings clamped to zero"""
    delta = np.clip(delta, 0.0, None)
    stiffness = 8.0 * params.hbar * G ** 2 * photons * delta
    return np.sqrt(stiffness / (1.0 + 4.0 * delta ** 2) / params.kappa / params.mass)


def spring_curve(delta: Any, params: SystemParams, photon_map=None,
                 power: Optional[float] = None) -> Any:
    """
    Resonance (Hz) over a detuning grid

    Args:
        delta: Normalized detuning(s), >= 0
        params: Parameter set supplying G, kappa, mass and the photon anchor
        photon_map: Photon-number model (fixed n_c when omitted)
        power: Incident power for power-aware maps

    Raises:
        DomainError: If any detuning is negative
    """
    delta_arr = np.asarray(delta, dtype=float)
    if np.any(delta_arr < 0):
        raise DomainError("normalized detuning must be >= 0")
    photon_map = photon_map or FixedPhotonMap()
    photons = photon_map.photons(delta_arr, params, power=power)
    frequency = _resonance(delta_arr, params.G, photons, params) / TWO_PI
    return float(frequency) if np.ndim(frequency) == 0 else frequency


def power_compensate(resonances: Any, power_measured: float, power_reference: float) -> Any:
    """
    Scale resonances measured at one power to another (f ~ sqrt(P))

    Raises:
        DomainError: If either power is not positive
    """
    if power_measured <= 0 or power_reference <= 0:
        raise DomainError("powers must be > 0 for compensation")
    factor = math.sqrt(power_reference / power_measured)
    if np.ndim(resonances) == 0:
        return float(resonances) * factor
    return np.asarray(resonances, dtype=float) * factor


def fit_spring(measurement: SpringMeasurement, params: SystemParams,
               initial_guess: Optional[Mapping[str, float]] = None, photon_map=None,
               fit_efficiency: Optional[bool] = None) -> FitResult:
    """
    Weighted Levenberg-Marquardt fit of the spring curve

    The model is f_i = spring_curve(mean_delta + s_i) with G^2 n_c(delta) as the
    stiffness scale. G is fitted as a ratio to its starting value; eta is free only
    for efficiency-sensitive photon maps.

    Args:
        measurement: Detuning offsets s_i, resonances (Hz) and their errors
        params: Parameter set providing kappa, mass and the photon anchor
        initial_guess: Optional ``G`` (rad/s/m), ``mean_delta`` and ``eta``
        photon_map: Photon-number model
        fit_efficiency: Force eta free (True) or fixed (False)

    Returns:
        FitResult with covariance from the Jacobian at the optimum

    Raises:
        LengthError: With fewer than 3 distinct detunings
        ConvergenceError: If the optimizer gives up
    """
    offsets = np.asarray(measurement.detuning_samples, dtype=float)
    observed = np.asarray(measurement.resonance_samples, dtype=float)
    sigma = np.asarray(measurement.resonance_errors, dtype=float)
    if np.unique(offsets).size < 3:
        raise LengthError("spring fit needs at least 3 distinct detuning samples")

    photon_map = photon_map or FixedPhotonMap()
    guess = dict(initial_guess or {})
    G0 = float(guess.get("G", params.G))
    delta0 = float(guess.get("mean_delta", params.delta))
    eta0 = float(guess.get("eta", params.eta))
    power = measurement.incident_power if measurement.incident_power > 0 else None

    free_eta = photon_map.efficiency_sensitive if fit_efficiency is None else fit_efficiency
    if free_eta and not photon_map.efficiency_sensitive:
        warnings.warn("eta does not enter the spring curve with this photon map; "
                      "holding it fixed", RankDeficiencyWarning, stacklevel=2)
        logger.warning("eta not identifiable with the %s photon map", photon_map.name)
        free_eta = False

    def unpack(x: np.ndarray) -> Tuple[float, float, float]:
        eta = x[2] if free_eta else eta0
        return x[0], x[1], eta

    def model(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        ratio, mean_delta, eta = unpack(x)
        delta = mean_delta + offsets
        photons = photon_map.photons(delta, params, power=power, eta=eta)
        G = math.copysign(abs(G0) * math.sqrt(max(ratio, 0.0)), G0)
        return _resonance(delta, G, photons, params) / TWO_PI, delta, eta

    def residuals(x: np.ndarray) -> np.ndarray:
        frequency, _, _ = model(x)
        return (frequency - observed) / sigma

    def jacobian(x: np.ndarray) -> np.ndarray:
        frequency, delta, eta = model(x)
        ratio = max(x[0], 1e-300)
        safe = np.clip(delta, 1e-300, None)
        d_log_delta, d_log_eta = photon_map.log_derivatives(safe, eta)
        half = frequency / 2.0 / sigma
        columns = [
            half / ratio,
            half * (d_log_delta + 1.0 / safe - 8.0 * safe / (1.0 + 4.0 * safe ** 2)),
        ]
        if free_eta:
            columns.append(half * d_log_eta)
        return np.column_stack(columns)

    start = [1.0, delta0] + ([eta0] if free_eta else [])
    if "G" in guess and G0 != params.G:
        logger.debug("Spring fit starts from G = %.4g rad/s/m", G0)
    result = least_squares(residuals, start, jac=jacobian, method="lm",
                           xtol=1e-15, ftol=1e-15, gtol=1e-10, max_nfev=MAX_EVALUATIONS)
    if result.status <= 0:
        raise ConvergenceError(f"spring fit did not converge: {result.message}")

    jac = result.jac
    singular = np.linalg.svd(jac, compute_uv=False)
    if singular[-1] == 0 or singular[0] / singular[-1] > RANK_CONDITION_LIMIT:
        warnings.warn("spring fit parameters are not separately identifiable",
                      RankDeficiencyWarning, stacklevel=2)
        logger.warning("Spring fit Jacobian is rank deficient (condition %.3g)",
                       singular[0] / max(singular[-1], 1e-300))
    fit_covariance = np.linalg.pinv(jac.T @ jac)

    ratio, mean_delta, eta = unpack(result.x)
    G = math.copysign(abs(G0) * math.sqrt(max(ratio, 0.0)), G0)
    # d G / d ratio, then embed in (G, eta, mean_delta) order
    transform = np.zeros((3, len(result.x)))
    transform[0, 0] = abs(G0) / (2.0 * math.sqrt(max(ratio, 1e-300))) * math.copysign(1.0, G0)
    transform[2, 1] = 1.0
    if free_eta:
        transform[1, 2] = 1.0
    covariance = transform @ fit_covariance @ transform.T
    covariance = (covariance + covariance.T) / 2.0

    logger.info("Spring fit: G = %.4g rad/s/m, mean delta = %.4g, eta = %.3g",
                G, mean_delta, eta)
    return FitResult(
        G=G,
        eta=float(eta),
        mean_delta=float(mean_delta),
        residual_norm=float(np.linalg.norm(result.fun)),
        parameter_covariance=covariance,
        residuals=result.fun.copy(),
        free_parameters=("G", "mean_delta") + (("eta",) if free_eta else ()),
        evaluations=int(result.nfev),
        photon_map=photon_map.name,
    )


@dataclass(frozen=True)
class ResonanceTrack:
    resonance_hz: np.ndarray
    delta: np.ndarray
    clamp_fraction: float


def resonance_timeseries_model(displacement: np.ndarray, params: SystemParams,
                               mean_delta: float, photon_map=None) -> ResonanceTrack:
    """
    Resonance track implied by a slowly drifting mirror displacement

    delta(t) = mean_delta + G x(t) / kappa, clamped at zero.

    Args:
        displacement: Calibrated displacement (m)
        params: Parameter set supplying G and kappa
        mean_delta: Operating-point detuning, >= 0
        photon_map: Photon-number model

    Returns:
        ResonanceTrack with the resonance (Hz), detuning and the clamped fraction
    """
    if mean_delta < 0:
        raise DomainError("mean detuning must be >= 0")
    delta = mean_delta + params.G * np.asarray(displacement, dtype=float) / params.kappa
    clamped = delta < 0
    clamp_fraction = float(clamped.mean()) if delta.size else 0.0
    if clamp_fraction > 0:
        logger.warning("Detuning clamped at zero for %.2f%% of samples",
                       100.0 * clamp_fraction)
        delta = np.where(clamped, 0.0, delta)
    return ResonanceTrack(spring_curve(delta, params, photon_map), delta, clamp_fraction)


def _spring_peak(params: SystemParams, photon_map) -> float:
    """Detuning where the resonance peaks"""
    photon_map = photon_map or FixedPhotonMap()
    if isinstance(photon_map, FixedPhotonMap):
        return 0.5
    result = minimize_scalar(lambda d: -spring_curve(d, params, photon_map),
                             bounds=(1e-9, 10.0), method="bounded",
                             options={"xatol": 1e-10})
    return float(result.x)


def invert_spring(resonance_hz: float, params: SystemParams, photon_map=None,
                  branch: str = "small") -> float:
    """
    Detuning giving ``resonance_hz`` on the small or large detuning branch

    Raises:
        DomainError: If the resonance exceeds the spring maximum
    """
    if branch not in ("small", "large"):
        raise ConfigError("branch must be 'small' or 'large'")
    if resonance_hz <= 0:
        return 0.0
    peak = _spring_peak(params, photon_map)
    top = spring_curve(peak, params, photon_map)
    if resonance_hz > top:
        raise DomainError(f"{resonance_hz:g} Hz exceeds the spring maximum {top:g} Hz")

    def gap(delta: float) -> float:
        return spring_curve(delta, params, photon_map) - resonance_hz

    if resonance_hz == top:
        return peak
    if branch == "small":
        return float(brentq(gap, 0.0, peak, xtol=1e-14, rtol=1e-12))
    upper = 2.0 * peak
    while gap(upper) > 0:
        upper *= 2.0
        if upper > DELTA_SEARCH_LIMIT:
            raise DomainError("no large-detuning solution below the search limit")
    return float(brentq(gap, peak, upper, xtol=1e-14, rtol=1e-12))


def branch_partner(delta: float, params: SystemParams, photon_map=None) -> float:
    """The detuning on the other branch with the same resonance"""
    peak = _spring_peak(params, photon_map)
    frequency = spring_curve(delta, params, photon_map)
    other = "large" if delta < peak else "small"
    return invert_spring(frequency, params, photon_map, other)


@dataclass
class DetuningEstimate:
    """
    Detuning inferred from counted frequencies binned by displacement

    ``candidates`` maps branch name to (mean_delta, residual_norm); the branch with
    the smaller residual is the estimate.
    """

    mean_delta: float
    error: float
    branch: str
    candidates: Dict[str, Tuple[float, float]]
    bin_displacement: np.ndarray
    bin_frequency: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean_delta": self.mean_delta,
            "mean_delta_error": self.error,
            "branch": self.branch,
            "candidates": {name: {"mean_delta": value, "residual_norm": residual}
                           for name, (value, residual) in self.candidates.items()},
            "bin_displacement_m": self.bin_displacement.tolist(),
            "bin_frequency_hz": self.bin_frequency.tolist(),
        }


def detuning_from_counts(counted_hz: np.ndarray, displacement: np.ndarray,
                         params: SystemParams, photon_map=None, n_bins: int = 3,
                         max_samples_per_bin: int = 20000) -> DetuningEstimate:
    """
    Estimate the mean detuning from counted resonance and slow displacement

    Samples are split into equal-population bins by displacement (terciles by
    default). For each branch the mean detuning is fitted so that the spring curve,
    averaged over each bin's detuning samples, matches the bin's mean frequency.

    Raises:
        LengthError: If the series are not time-aligned
        DegenerateBinningError: If the displacement does not vary
    """
    counted_hz = np.asarray(counted_hz, dtype=float)
    displacement = np.asarray(displacement, dtype=float)
    if counted_hz.shape != displacement.shape:
        raise LengthError("counted frequency and displacement must be time-aligned")
    if counted_hz.size < n_bins:
        raise LengthError("fewer samples than bins")
    if np.ptp(displacement) == 0:
        raise DegenerateBinningError("displacement has zero range; cannot bin by detuning")

    order = np.argsort(displacement, kind="stable")
    groups = np.array_split(order, n_bins)
    bin_frequency = np.array([counted_hz[g].mean() for g in groups])
    bin_displacement = np.array([displacement[g].mean() for g in groups])
    shifts = []
    for group in groups:
        step = max(1, group.size // max_samples_per_bin)
        shifts.append(params.G * displacement[group[::step]] / params.kappa)

    def predicted(mean_delta: float) -> np.ndarray:
        return np.array([np.mean(spring_curve(np.clip(mean_delta + s, 0.0, None),
                                              params, photon_map)) for s in shifts])

    def fit_branch(branch: str) -> Tuple[float, float, float]:
        start = invert_spring(min(float(bin_frequency.mean()),
                                  spring_curve(_spring_peak(params, photon_map),
                                               params, photon_map)),
                              params, photon_map, branch)
        start = max(start, 1e-6)

        def residuals(x: np.ndarray) -> np.ndarray:
            return predicted(x[0]) - bin_frequency

        result = least_squares(residuals, [start], method="lm", x_scale=[start],
                               xtol=1e-14, ftol=1e-14)
        jac = result.jac
        dof = max(n_bins - 1, 1)
        variance = float(result.fun @ result.fun) / dof
        information = float(jac[:, 0] @ jac[:, 0])
        error = math.sqrt(variance / information) if information > 0 else math.inf
        return float(result.x[0]), float(np.linalg.norm(result.fun)), error

    candidates: Dict[str, Tuple[float, float]] = {}
    errors: Dict[str, float] = {}
    for branch in ("small", "large"):
        try:
            value, residual, error = fit_branch(branch)
        except (DomainError, ValueError) as exc:
            logger.warning("Branch %s not fitted: %s", branch, exc)
            continue
        candidates[branch] = (value, residual)
        errors[branch] = error
    if not candidates:
        raise ConvergenceError("no detuning branch could be fitted")
    best = min(candidates, key=lambda name: candidates[name][1])
    logger.info("Detuning from counts: %.5g (%s branch)", candidates[best][0], best)
    return DetuningEstimate(
        mean_delta=candidates[best][0],
        error=errors[best],
        branch=best,
        candidates=candidates,
        bin_displacement=bin_displacement,
        bin_frequency=bin_frequency,
    )


@dataclass
class CountedResonance:
    """Output of the frequency-counting chain"""

    sample_rate: float
    instantaneous_hz: np.ndarray
    slow_displacement: np.ndarray
    binned_hz: np.ndarray
    bin_times: np.ndarray


def count_resonance(displacement: np.ndarray, sample_rate: float,
                    band: Tuple[float, float] = (170.0, 360.0), lowpass_hz: float = 8.2,
                    n_bins: int = 25) -> CountedResonance:
    """
    Bandpass, count zero crossings, lowpass and bin a displacement record

    Args:
        displacement: Raw calibrated displacement (m), drift included
        sample_rate: Hz
        band: Bandpass corners around the resonance (Hz)
        lowpass_hz: Smoothing cutoff for the counted frequency and the drift
        n_bins: Number of time bins

    Returns:
        CountedResonance with the smoothed instantaneous frequency, the lowpassed
        displacement (for detuning binning) and the binned frequency
    """
    displacement = np.asarray(displacement, dtype=float)
    carrier = dsp.bandpass(displacement, band[0], band[1], sample_rate)
    counted = dsp.count_zero_crossings(carrier, sample_rate)
    smoothed = dsp.lowpass(counted, lowpass_hz, sample_rate)
    slow = dsp.lowpass(displacement, lowpass_hz, sample_rate)
    edges = dsp.bin_edges(smoothed.size, n_bins)
    bin_times = (edges[:-1] + edges[1:]) / 2.0 / sample_rate
    return CountedResonance(
        sample_rate=sample_rate,
        instantaneous_hz=smoothed,
        slow_displacement=slow,
        binned_hz=dsp.bin_average(smoothed, n_bins),
        bin_times=bin_times,
    )
