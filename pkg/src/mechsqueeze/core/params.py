"""
Optomechanical parameter registry: physical symbols, invariants and derived quantities

All internal frequencies are angular (rad/s). Mappings read from parameter files use
ordinary frequency (Hz) and the key names listed in ``CONFIG_KEYS``.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy import constants as sc

from ..errors import DomainError, ParameterError, RegimeWarning
from ..utils.helpers import hz_to_rad, rad_to_hz

logger = logging.getLogger(__name__)

HBAR_DEFAULT = 1.0546e-34

# Regime limits of the adiabatic (bad cavity, small detuning) model
BAD_CAVITY_RATIO = 100.0
SMALL_DETUNING_LIMIT = 0.1

CONFIG_KEYS = (
    "mass_mg", "kappa_hz", "delta_over_kappa", "n_c", "G_hz_per_m", "eta",
    "N_th", "n_th", "Q", "omega_m_hz", "Gamma_hz", "T_kelvin", "power_w",
)
OPTIONAL_KEYS = (
    "Omega_hz", "room_temperature_kelvin", "calibration_m_per_v",
    "laser_frequency_hz", "hbar", "displacement_variance_m2",
)


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = HBAR_DEFAULT
    k_B: float = sc.k


@dataclass(frozen=True)
class MechanicalParams:
    """Mechanical oscillator parameters (angular frequencies in rad/s)"""

    mass: float
    bare_frequency: float
    bare_damping: float
    effective_damping: float
    quality_factor: float
    phonon_occupancy: float
    mode_temperature: float
    room_temperature: float = 300.0


@dataclass(frozen=True)
class OpticalParams:
    """Cavity and readout parameters (angular frequencies in rad/s)"""

    decay_rate: float
    detuning: float
    normalized_detuning: float
    freq_shift_per_disp: float
    circulating_photons: float
    detection_efficiency: float
    optical_noise_occupancy: float
    incident_power: float
    laser_frequency: Optional[float] = None


@dataclass(frozen=True)
class DerivedParams:
    confined_frequency: float
    zero_point_amplitude: float
    zero_point_momentum: float
    bare_coupling: float
    confined_coupling: float
    cooperativity: float
    quantum_cooperativity: float


@dataclass(frozen=True)
class SystemParams:
    """
    Complete, immutable optomechanical parameter set

    ``uncertainties`` holds optional one-sigma values keyed like the parameter file;
    they are reported, never propagated.
    """

    constants: PhysicalConstants
    mechanical: MechanicalParams
    optical: OpticalParams
    derived: DerivedParams
    calibration_m_per_v: Optional[float] = None
    uncertainties: Mapping[str, float] = field(default_factory=dict)
    regime_warnings: Tuple[str, ...] = ()

    # shorthand accessors used throughout the numerics
    @property
    def hbar(self) -> float:
        return self.constants.hbar

    @property
    def mass(self) -> float:
        return self.mechanical.mass

    @property
    def omega_m(self) -> float:
        return self.derived.confined_frequency

    @property
    def gamma_m(self) -> float:
        return self.mechanical.effective_damping

    @property
    def n_th(self) -> float:
        return self.mechanical.phonon_occupancy

    @property
    def kappa(self) -> float:
        return self.optical.decay_rate

    @property
    def delta(self) -> float:
        return self.optical.normalized_detuning

    @property
    def G(self) -> float:
        return self.optical.freq_shift_per_disp

    @property
    def n_c(self) -> float:
        return self.optical.circulating_photons

    @property
    def eta(self) -> float:
        return self.optical.detection_efficiency

    @property
    def N_th(self) -> float:
        return self.optical.optical_noise_occupancy

    @property
    def power(self) -> float:
        return self.optical.incident_power

    @property
    def g_m(self) -> float:
        return self.derived.confined_coupling

    @property
    def x_zpf(self) -> float:
        return self.derived.zero_point_amplitude

    @property
    def p_zpf(self) -> float:
        return self.derived.zero_point_momentum

    def with_noise(self, n_th: Optional[float] = None,
                   N_th: Optional[float] = None) -> "SystemParams":
        """
        Copy with replaced noise occupancies (everything else unchanged)

        Args:
            n_th: New phonon occupancy
            N_th: New optical noise occupancy

        Returns:
            New parameter set with cooperativities recomputed
        """
        mechanical = self.mechanical
        optical = self.optical
        if n_th is not None:
            mechanical = replace(mechanical, phonon_occupancy=float(n_th))
        if N_th is not None:
            optical = replace(optical, optical_noise_occupancy=float(N_th))
        derived = derive_coupling(optical, mechanical, self.constants,
                                  self.omega_m)
        return replace(self, mechanical=mechanical, optical=optical, derived=derived)

    def with_updates(self, **changes: float) -> "SystemParams":
        """
        Rebuild from the parameter-file representation with some keys replaced

        Args:
            **changes: Parameter-file keys (Hz units), e.g. ``delta_over_kappa=0.05``

        Returns:
            New validated parameter set
        """
        mapping = self.to_mapping()
        mapping.update(changes)
        return validate(params_from_mapping(mapping))

    def to_mapping(self) -> Dict[str, Any]:
        """Parameter-file representation (Hz units, config key names)"""
        mapping: Dict[str, Any] = {
            "mass_mg": self.mass * 1e6,
            "kappa_hz": rad_to_hz(self.kappa),
            "delta_over_kappa": self.delta,
            "n_c": self.n_c,
            "G_hz_per_m": rad_to_hz(self.G),
            "eta": self.eta,
            "N_th": self.N_th,
            "n_th": self.n_th,
            "Q": self.mechanical.quality_factor,
            "omega_m_hz": rad_to_hz(self.omega_m),
            "Gamma_hz": rad_to_hz(self.mechanical.bare_damping),
            "T_kelvin": self.mechanical.mode_temperature,
            "power_w": self.power,
            "Omega_hz": rad_to_hz(self.mechanical.bare_frequency),
            "room_temperature_kelvin": self.mechanical.room_temperature,
            "hbar": self.hbar,
        }
        if self.calibration_m_per_v is not None:
            mapping["calibration_m_per_v"] = self.calibration_m_per_v
        if self.optical.laser_frequency is not None:
            mapping["laser_frequency_hz"] = rad_to_hz(self.optical.laser_frequency)
        return mapping

    def to_dict(self) -> Dict[str, Any]:
        """
        Full parameter set with derived quantities, for JSON output

        Angular quantities are reported in Hz (suffix ``_hz``).
        """
        derived = self.derived
        bare_coupling = (None if math.isnan(derived.bare_coupling)
                         else rad_to_hz(derived.bare_coupling))
        return {
            "inputs": self.to_mapping(),
            "derived": {
                "omega_m_hz": rad_to_hz(self.omega_m),
                "gamma_m_hz": rad_to_hz(self.gamma_m),
                "detuning_hz": rad_to_hz(self.optical.detuning),
                "x_zpf_m": derived.zero_point_amplitude,
                "p_zpf_kg_m_per_s": derived.zero_point_momentum,
                "g_hz": bare_coupling,
                "g_m_hz": rad_to_hz(derived.confined_coupling),
                "cooperativity": derived.cooperativity,
                "quantum_cooperativity": derived.quantum_cooperativity,
                "kappa_over_omega_m": self.kappa / self.omega_m,
            },
            "uncertainties": dict(self.uncertainties),
            "regime_warnings": list(self.regime_warnings),
        }


def spring_frequency(delta: Any, G: float, n_c: Any, kappa: float, mass: float,
                     hbar: float = HBAR_DEFAULT) -> Any:
    """
    Optical-spring resonance omega_m = sqrt(8 hbar G^2 n_c delta / (1+4 delta^2) / kappa / m)

    Vectorized over ``delta`` and ``n_c``.

    Raises:
        DomainError: If any detuning is negative (anti-spring regime)
    """
    delta_arr = np.asarray(delta, dtype=float)
    if np.any(delta_arr < 0):
        raise DomainError("normalized detuning must be >= 0 (anti-spring regime "
                          "is not modeled)")
    stiffness = 8.0 * hbar * G ** 2 * np.asarray(n_c, dtype=float) * delta_arr
    omega = np.sqrt(stiffness / (1.0 + 4.0 * delta_arr ** 2) / kappa / mass)
    return float(omega) if np.ndim(omega) == 0 else omega


def derive_confined_frequency(optical: OpticalParams, mechanical: MechanicalParams,
                              constants: PhysicalConstants) -> float:
    """
    Confined mechanical resonance from the optical spring

    Args:
        optical: Cavity parameters (uses kappa, delta, G, n_c)
        mechanical: Mechanical parameters (uses mass)
        constants: Physical constants

    Returns:
        omega_m in rad/s (zero when delta or n_c is zero)

    Raises:
        DomainError: If delta < 0
    """
    return spring_frequency(optical.normalized_detuning, optical.freq_shift_per_disp,
                            optical.circulating_photons, optical.decay_rate,
                            mechanical.mass, constants.hbar)


def photons_from_frequency(omega_m: float, optical: OpticalParams,
                           mechanical: MechanicalParams,
                           constants: PhysicalConstants) -> float:
    """Circulating photon number that produces the confined frequency omega_m"""
    delta = optical.normalized_detuning
    if delta <= 0:
        raise DomainError("photon number is undetermined at zero detuning")
    return (omega_m ** 2 * optical.decay_rate * mechanical.mass * (1.0 + 4.0 * delta ** 2)
            / (8.0 * constants.hbar * optical.freq_shift_per_disp ** 2 * delta))


def derive_coupling(optical: OpticalParams, mechanical: MechanicalParams,
                    constants: PhysicalConstants, confined_frequency: float) -> DerivedParams:
    """
    Zero-point scales, couplings and cooperativities of the confined mode

    Args:
        optical: Cavity parameters
        mechanical: Mechanical parameters
        constants: Physical constants
        confined_frequency: omega_m in rad/s

    Returns:
        DerivedParams (g_m keeps the sign of G)

    Raises:
        DomainError: If omega_m <= 0
    """
    omega_m = float(confined_frequency)
    if not omega_m > 0:
        raise DomainError(f"confined frequency must be > 0, got {omega_m!r} rad/s")
    hbar = constants.hbar
    mass = mechanical.mass
    x_zpf = math.sqrt(hbar / (2.0 * mass * omega_m))
    p_zpf = math.sqrt(hbar * mass * omega_m / 2.0)
    sqrt_photons = math.sqrt(optical.circulating_photons)
    g_m = optical.freq_shift_per_disp * sqrt_photons * x_zpf
    bare = mechanical.bare_frequency
    if bare > 0:
        g = optical.freq_shift_per_disp * sqrt_photons * math.sqrt(hbar / (2.0 * mass * bare))
    else:
        g = math.nan
    cooperativity = 4.0 * g_m ** 2 / (mechanical.effective_damping * optical.decay_rate)
    n_th = mechanical.phonon_occupancy
    quantum = cooperativity / n_th if n_th > 0 else math.inf
    return DerivedParams(
        confined_frequency=omega_m,
        zero_point_amplitude=x_zpf,
        zero_point_momentum=p_zpf,
        bare_coupling=g,
        confined_coupling=g_m,
        cooperativity=cooperativity,
        quantum_cooperativity=quantum,
    )


def occupancy_from_temperature(temperature: float, omega: float,
                               constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Bose-Einstein occupancy of a mode at angular frequency omega"""
    if temperature <= 0:
        return 0.0
    return 1.0 / math.expm1(constants.hbar * omega / (constants.k_B * temperature))


def temperature_from_occupancy(n_th: float, omega: float,
                               constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Inverse of occupancy_from_temperature"""
    if n_th <= 0:
        return 0.0
    return constants.hbar * omega / (constants.k_B * math.log1p(1.0 / n_th))


def occupancy_from_variance(displacement_variance: float, x_zpf: float) -> float:
    """
    Phonon occupancy from a measured displacement variance

    Var(x) = x_zpf^2 (2 n_th + 1), clipped at zero.
    """
    return max((displacement_variance / x_zpf ** 2 - 1.0) / 2.0, 0.0)


def structural_damping(omega: Any, params: SystemParams) -> Any:
    """
    Frequency-dependent bare damping Gamma(omega) = Gamma * Omega / omega

    Falls back to the constant Gamma when the bare frequency is unknown.
    """
    gamma0 = params.mechanical.bare_damping
    bare = params.mechanical.bare_frequency
    if bare <= 0:
        return gamma0 * np.ones_like(np.asarray(omega, dtype=float))
    return gamma0 * bare / np.asarray(omega, dtype=float)


def cooled_temperature_prediction(params: SystemParams, structural: bool = True) -> float:
    """
    Expected confined-mode temperature T_room * Gamma(omega_m) / gamma_m

    Args:
        params: Parameter set
        structural: Use structural damping at omega_m instead of the constant Gamma

    Returns:
        Temperature in K
    """
    if structural:
        gamma_at = float(structural_damping(params.omega_m, params))
    else:
        gamma_at = params.mechanical.bare_damping
    return params.mechanical.room_temperature * gamma_at / params.gamma_m


def volts_to_displacement(volts: Any, calibration_m_per_v: float) -> np.ndarray:
    """Photodetector voltage to mirror displacement (m); the factor carries the sign"""
    return np.asarray(volts, dtype=float) * calibration_m_per_v


def displacement_to_quadrature(displacement: Any, params: SystemParams) -> np.ndarray:
    """Displacement (m) to the dimensionless position quadrature q = x / x_zpf"""
    return np.asarray(displacement, dtype=float) / params.x_zpf


def build_params(*, mass: float, kappa: float, delta: float, n_c: float, G: float,
                 eta: float, N_th: float, n_th: Optional[float], Q: float,
                 omega_m: Optional[float] = None, Gamma: float = 1e-3,
                 temperature: Optional[float] = None, power: float = 0.0,
                 bare_frequency: float = 0.0, room_temperature: float = 300.0,
                 displacement_variance: Optional[float] = None,
                 laser_frequency: Optional[float] = None,
                 calibration_m_per_v: Optional[float] = None,
                 hbar: float = HBAR_DEFAULT,
                 uncertainties: Optional[Mapping[str, float]] = None) -> SystemParams:
    """
    Assemble a SystemParams from SI / rad-per-second inputs

    n_th may be given directly; otherwise it is computed from a measured displacement
    variance, and failing that from the mode temperature. Direct supply wins.

    Raises:
        ParameterError: If a required value is missing or non-positive
        DomainError: If omega_m cannot be derived
    """
    constants = PhysicalConstants(hbar=hbar)
    if hbar <= 0:
        raise ParameterError("hbar", "must be > 0")
    if mass <= 0:
        raise ParameterError("mass_mg", "must be > 0")
    if kappa <= 0:
        raise ParameterError("kappa_hz", "must be > 0")
    if Q <= 0:
        raise ParameterError("Q", "must be > 0")

    optical = OpticalParams(
        decay_rate=kappa,
        detuning=delta * kappa,
        normalized_detuning=delta,
        freq_shift_per_disp=G,
        circulating_photons=n_c,
        detection_efficiency=eta,
        optical_noise_occupancy=N_th,
        incident_power=power,
        laser_frequency=laser_frequency,
    )
    if omega_m is None:
        omega_m = spring_frequency(delta, G, n_c, kappa, mass, hbar)
    if not omega_m > 0:
        raise DomainError("confined frequency is zero; supply omega_m_hz or a "
                          "positive detuning and photon number")

    x_zpf = math.sqrt(hbar / (2.0 * mass * omega_m))
    if n_th is None:
        if displacement_variance is not None:
            n_th = occupancy_from_variance(displacement_variance, x_zpf)
        elif temperature is not None:
            n_th = occupancy_from_temperature(temperature, omega_m, constants)
        else:
            raise ParameterError("n_th", "missing (give n_th, displacement_variance_m2 "
                                 "or T_kelvin)")
    if temperature is None:
        temperature = temperature_from_occupancy(n_th, omega_m, constants)

    gamma_m = omega_m / Q
    mechanical = MechanicalParams(
        mass=mass,
        bare_frequency=bare_frequency,
        bare_damping=Gamma,
        effective_damping=gamma_m,
        quality_factor=omega_m / gamma_m,
        phonon_occupancy=n_th,
        mode_temperature=temperature,
        room_temperature=room_temperature,
    )
    derived = derive_coupling(optical, mechanical, constants, omega_m)
    return SystemParams(
        constants=constants,
        mechanical=mechanical,
        optical=optical,
        derived=derived,
        calibration_m_per_v=calibration_m_per_v,
        uncertainties=dict(uncertainties or {}),
    )


def params_from_mapping(mapping: Mapping[str, Any]) -> SystemParams:
    """
    Build parameters from a parameter-file mapping (Hz units)

    Keys may sit at top level or inside one level of tables; an ``uncertainty``
    table holds one-sigma values keyed the same way.

    Raises:
        ParameterError: On missing or non-numeric values
    """
    flat: Dict[str, Any] = {}
    uncertainties: Dict[str, float] = {}
    for key, value in mapping.items():
        if isinstance(value, Mapping):
            target = uncertainties if key in ("uncertainty", "uncertainties") else flat
            for inner_key, inner_value in value.items():
                target[inner_key] = inner_value
        else:
            flat[key] = value

    def number(key: str, default: Any = ...) -> Optional[float]:
        if key not in flat or flat[key] is None:
            if default is ...:
                raise ParameterError(key, "missing from parameter file")
            return default
        try:
            return float(flat[key])
        except (TypeError, ValueError):
            raise ParameterError(key, f"not a number: {flat[key]!r}")

    unknown = set(flat) - set(CONFIG_KEYS) - set(OPTIONAL_KEYS)
    if unknown:
        logger.warning("Ignoring unknown parameter keys: %s", ", ".join(sorted(unknown)))

    omega_m_hz = number("omega_m_hz", None)
    laser_hz = number("laser_frequency_hz", None)
    return build_params(
        mass=number("mass_mg") * 1e-6,
        kappa=hz_to_rad(number("kappa_hz")),
        delta=number("delta_over_kappa"),
        n_c=number("n_c"),
        G=hz_to_rad(number("G_hz_per_m")),
        eta=number("eta"),
        N_th=number("N_th"),
        n_th=number("n_th", None),
        Q=number("Q"),
        omega_m=None if omega_m_hz is None else hz_to_rad(omega_m_hz),
        Gamma=hz_to_rad(number("Gamma_hz")),
        temperature=number("T_kelvin", None),
        power=number("power_w"),
        bare_frequency=hz_to_rad(number("Omega_hz", 0.0)),
        room_temperature=number("room_temperature_kelvin", 300.0),
        displacement_variance=number("displacement_variance_m2", None),
        laser_frequency=None if laser_hz is None else hz_to_rad(laser_hz),
        calibration_m_per_v=number("calibration_m_per_v", None),
        hbar=number("hbar", HBAR_DEFAULT),
        uncertainties={key: float(value) for key, value in uncertainties.items()},
    )


def _relative_gap(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def validate(params: SystemParams) -> SystemParams:
    """
    Check invariants and the adiabatic-model regime

    Args:
        params: Parameter set

    Returns:
        The same parameters, with ``regime_warnings`` attached when kappa < 100 omega_m
        or delta > 0.1

    Raises:
        ParameterError: Naming the first field that violates an invariant
    """
    mech = params.mechanical
    opt = params.optical
    checks = (
        ("hbar", params.constants.hbar > 0, "must be > 0"),
        ("mass_mg", mech.mass > 0, "must be > 0"),
        ("Omega_hz", mech.bare_frequency >= 0, "must be >= 0"),
        ("Gamma_hz", mech.bare_damping > 0, "must be > 0"),
        ("Q", mech.effective_damping > 0, "effective damping must be > 0"),
        ("n_th", mech.phonon_occupancy >= 0, "must be >= 0"),
        ("kappa_hz", opt.decay_rate > 0, "must be > 0"),
        ("n_c", opt.circulating_photons >= 0, "must be >= 0"),
        ("eta", 0.0 <= opt.detection_efficiency <= 1.0, "must lie in [0, 1]"),
        ("N_th", opt.optical_noise_occupancy >= 0, "must be >= 0"),
        ("power_w", opt.incident_power >= 0, "must be >= 0"),
        ("delta_over_kappa",
         _relative_gap(opt.normalized_detuning * opt.decay_rate, opt.detuning) <= 1e-12,
         "inconsistent with detuning / kappa"),
        ("Q",
         _relative_gap(mech.quality_factor, params.omega_m / mech.effective_damping) <= 1e-9,
         "inconsistent with omega_m / gamma_m"),
    )
    for name, ok, message in checks:
        if not ok:
            raise ParameterError(name, message)

    notes = []
    ratio = opt.decay_rate / params.omega_m
    if ratio < BAD_CAVITY_RATIO:
        notes.append(f"kappa/omega_m = {ratio:.3g} < {BAD_CAVITY_RATIO:g}: outside the "
                     "bad-cavity limit")
    if opt.normalized_detuning > SMALL_DETUNING_LIMIT:
        notes.append(f"delta = {opt.normalized_detuning:.3g} > {SMALL_DETUNING_LIMIT:g}: "
                     "outside the small-detuning approximation")
    if not notes:
        return params
    for note in notes:
        logger.warning("Regime warning: %s", note)
        warnings.warn(note, RegimeWarning, stacklevel=2)
    return replace(params, regime_warnings=tuple(notes))


# Published parameter set (central values) and headline numbers
PUBLISHED_PARAMETERS: Dict[str, float] = {
    "mass_mg": 7.71,
    "kappa_hz": 1.64e6,
    "delta_over_kappa": 0.0292,
    "n_c": 1.17e10,
    "G_hz_per_m": -4.72e15,
    "eta": 0.92,
    "N_th": 19.0,
    "n_th": 8.0e5,
    "Q": 250.0,
    "omega_m_hz": 280.0,
    "Gamma_hz": 4.74e-5,
    "T_kelvin": 0.011,
    "power_w": 0.030,
    "calibration_m_per_v": -2.3e-10,
}

PUBLISHED_UNCERTAINTIES: Dict[str, float] = {
    "mass_mg": 0.01,
    "kappa_hz": 0.02e6,
    "delta_over_kappa": 0.0004,
    "n_c": 0.06e10,
    "G_hz_per_m": 0.03e15,
    "eta": 0.02,
    "n_th": 1.8e5,
    "Q": 13.0,
    "omega_m_hz": 7.0,
    "Gamma_hz": 0.05e-5,
    "T_kelvin": 0.002,
    "calibration_m_per_v": 0.4e-10,
}

PUBLISHED_RESULTS: Dict[str, float] = {
    "omega_m_hz": 280.0,
    "g_m_hz": -3.2e4,
    "quantum_cooperativity": 0.0027,
    "omega_prime_hz": 706.0,
    "gamma_prime_hz": 1080.0,
    "A": 1.2e6,
    "B_s": 4.1e-4,
    "V_qq": 570.0,
    "V_pp": 14000.0,
    "V_qp": 2160.0,
    "squeeze_var": 230.0,
    "antisqueeze_var": 14400.0,
    "angle_deg": 9.0,
    "purity": 5.5e-4,
    "delta_over_kappa": 0.0292,
}


def table1_params(**overrides: float) -> SystemParams:
    """
    The published parameter set, optionally with parameter-file keys overridden

    Pass ``omega_m_hz=None`` to derive the resonance from the optical spring.
    """
    mapping: Dict[str, Any] = dict(PUBLISHED_PARAMETERS)
    mapping.update(overrides)
    mapping["uncertainty"] = dict(PUBLISHED_UNCERTAINTIES)
    return validate(params_from_mapping(mapping))


