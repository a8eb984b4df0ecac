"""
Linearized optomechanical dynamics after adiabatic elimination of the cavity

State (q, p) in zero-point units, driven by the inputs (p_in, x_in, y_in); the
detected amplitude quadrature is X. Trajectories come from an exact discretization
of the linear SDE, so there is no step-size bias.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd
from scipy import signal
from scipy.linalg import expm, solve_continuous_lyapunov

from ..errors import LengthError, SingularityError, StepSizeError
from .params import SystemParams

logger = logging.getLogger(__name__)

INPUT_NAMES = ("p_in", "x_in", "y_in")
OPTICAL_NOISE_PLACEMENTS = ("both", "amplitude")


@dataclass(frozen=True)
class ModelOptions:
    """
    Modeling switches

    optical_noise: "both" puts the optical noise occupancy N_th on x_in and y_in,
        "amplitude" only on x_in (y_in stays at vacuum).
    """

    optical_noise: str = "both"

    def __post_init__(self) -> None:
        if self.optical_noise not in OPTICAL_NOISE_PLACEMENTS:
            raise ValueError(f"optical_noise must be one of {OPTICAL_NOISE_PLACEMENTS}")


@dataclass(frozen=True)
class StateSpaceModel:
    """
    Continuous-time linear Gaussian model

        d(q, p)/dt = drift @ (q, p) + noise_map @ w
        X          = measurement_row @ (q, p) + feedthrough @ w

    with white inputs w = (p_in, x_in, y_in), <w_i(t) w_j(t')> = input_psd_ij delta(t-t').
    """

    drift: np.ndarray
    noise_map: np.ndarray
    measurement_row: np.ndarray
    feedthrough: np.ndarray
    input_psd: np.ndarray

    @property
    def omega_m(self) -> float:
        return float(self.drift[0, 1])

    @property
    def gamma_m(self) -> float:
        return float(-self.drift[1, 1])

    @property
    def position_gain(self) -> float:
        """Coefficient of q in X"""
        return float(self.measurement_row[0, 0])

    @property
    def process_noise(self) -> np.ndarray:
        """L S L^T"""
        return self.noise_map @ self.input_psd @ self.noise_map.T

    @property
    def measurement_noise(self) -> float:
        """D S D^T"""
        return float((self.feedthrough @ self.input_psd @ self.feedthrough.T)[0, 0])

    @property
    def cross_noise(self) -> np.ndarray:
        """L S D^T, correlation between process and measurement noise"""
        return self.noise_map @ self.input_psd @ self.feedthrough.T


@dataclass(frozen=True)
class DiscreteSystem:
    """
    Exact sampled equivalent of a StateSpaceModel

    ``joint_cov`` is the covariance of (process increment over one step, measurement
    noise averaged over the same step).
    """

    dt: float
    transition: np.ndarray
    process_cov: np.ndarray
    cross_cov: np.ndarray
    measurement_var: float
    measurement_row: np.ndarray

    @property
    def joint_cov(self) -> np.ndarray:
        joint = np.zeros((3, 3))
        joint[:2, :2] = self.process_cov
        joint[:2, 2:] = self.cross_cov
        joint[2:, :2] = self.cross_cov.T
        joint[2, 2] = self.measurement_var
        return joint


@dataclass
class Trajectory:
    """Sampled time series sharing one time base"""

    sample_rate: float
    channels: Dict[str, np.ndarray]
    seed: Optional[int] = None
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        lengths = {name: len(values) for name, values in self.channels.items()}
        if len(set(lengths.values())) > 1:
            raise LengthError(f"channels differ in length: {lengths}")
        self.channels = {name: np.asarray(values, dtype=float)
                         for name, values in self.channels.items()}

    def __len__(self) -> int:
        return len(next(iter(self.channels.values()))) if self.channels else 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate

    def to_frame(self) -> pd.DataFrame:
        """DataFrame with a leading ``t`` column (seconds)"""
        frame = pd.DataFrame({"t": self.time})
        for name, values in self.channels.items():
            frame[name] = values
        return frame


def build_model(params: SystemParams, options: ModelOptions = ModelOptions()) -> StateSpaceModel:
    """
    State-space form of the adiabatically eliminated optomechanical equations

    Args:
        params: Validated parameter set
        options: Noise placement switches

    Returns:
        StateSpaceModel in zero-point units
    """
    omega = params.omega_m
    gamma = params.gamma_m
    g_m = params.g_m
    delta = params.delta
    kappa = params.kappa
    sqrt_eta = math.sqrt(params.eta)
    sqrt_kappa = math.sqrt(kappa)

    drift = np.array([[0.0, omega], [-omega, -gamma]])
    noise_map = np.array([
        [0.0, 0.0, 0.0],
        [math.sqrt(2.0 * gamma), -4.0 * g_m / sqrt_kappa, 8.0 * g_m * delta / sqrt_kappa],
    ])
    measurement_row = np.array([[-8.0 * g_m * delta * sqrt_eta / sqrt_kappa, 0.0]])
    feedthrough = np.array([[0.0, -sqrt_eta, 4.0 * delta * sqrt_eta]])

    optical = 2.0 * params.N_th + 1.0
    phase = optical if options.optical_noise == "both" else 1.0
    input_psd = np.diag([2.0 * params.n_th + 1.0, optical, phase])
    return StateSpaceModel(drift, noise_map, measurement_row, feedthrough, input_psd)


def discretize(model: StateSpaceModel, dt: float) -> DiscreteSystem:
    """
    Exact discretization of the linear SDE over one sample interval

    The transition is expm(F dt), the process covariance the integrated Lyapunov
    increment (Van Loan), and the measurement noise is the input averaged over the
    interval (variance ~ 1/dt) with its exact correlation to the process increment.

    Raises:
        StepSizeError: If dt <= 0 or dt * omega_m >= 2
    """
    if dt <= 0:
        raise StepSizeError(f"dt must be > 0, got {dt!r}")
    phase_step = abs(model.omega_m) * dt
    if phase_step >= 2.0:
        raise StepSizeError(f"dt * omega_m = {phase_step:.3g} >= 2: sampling too coarse")
    if phase_step >= 0.5:
        logger.warning("dt * omega_m = %.3g exceeds the recommended 0.5", phase_step)

    states = model.drift.shape[0]
    contQ = model.process_noise
    contQ = (contQ + contQ.T) / 2.0

    # M = [-F  Q ]    expm(M dt) = [.  F_d^-1 Q_d]
    #     [ 0  F^T]                [0  F_d^T     ]
    van_loan = np.block([[-model.drift, contQ],
                         [np.zeros((states, states)), model.drift.T]])
    phi = expm(van_loan * dt)
    transition = phi[states:, states:].T
    process_cov = transition @ phi[:states, states:]
    process_cov = (process_cov + process_cov.T) / 2.0

    # integral_0^dt expm(F u) du from the augmented exponential
    augmented = np.block([[model.drift, np.eye(states)],
                          [np.zeros((states, states)), np.zeros((states, states))]])
    integrated = expm(augmented * dt)[:states, states:]
    cross_cov = integrated @ model.cross_noise / dt

    return DiscreteSystem(
        dt=dt,
        transition=transition,
        process_cov=process_cov,
        cross_cov=cross_cov,
        measurement_var=model.measurement_noise / dt,
        measurement_row=model.measurement_row.copy(),
    )


def steady_state_covariance(model: StateSpaceModel) -> np.ndarray:
    """
    Unconditional stationary covariance of (q, p)

    Solves F P + P F^T + L S L^T = 0.

    Raises:
        SingularityError: If the drift is not Hurwitz (gamma_m <= 0)
    """
    if not model.gamma_m > 0:
        raise SingularityError("steady state needs gamma_m > 0")
    covariance = solve_continuous_lyapunov(model.drift, -model.process_noise)
    return (covariance + covariance.T) / 2.0


def _propagate(transition: np.ndarray, initial: np.ndarray,
               increments: np.ndarray) -> np.ndarray:
    """
    Run s[k+1] = transition @ s[k] + increments[k] from s[0] = initial

    The recursion is the 2x2 rational filter z (zI - transition)^-1, evaluated with
    ``lfilter`` so long records stay vectorized.
    """
    count = increments.shape[0] + 1
    drive = np.empty((count, 2))
    drive[0] = initial
    drive[1:] = increments
    (a00, a01), (a10, a11) = transition
    denominator = [1.0, -(a00 + a11), a00 * a11 - a01 * a10]
    q = (signal.lfilter([1.0, -a11], denominator, drive[:, 0])
         + signal.lfilter([0.0, a01], denominator, drive[:, 1]))
    p = (signal.lfilter([0.0, a10], denominator, drive[:, 0])
         + signal.lfilter([1.0, -a00], denominator, drive[:, 1]))
    return np.column_stack([q, p])


def simulate(model: StateSpaceModel, duration: float, sample_rate: float,
             seed: Optional[int] = None,
             initial_state: Optional[np.ndarray] = None) -> Trajectory:
    """
    Sample a trajectory of (q, p, X)

    Args:
        model: Continuous-time model
        duration: Length in seconds
        sample_rate: Samples per second
        seed: Seed for numpy's default generator; same seed, same trajectory
        initial_state: (q, p) at t = 0; drawn from the stationary covariance when
            omitted (zero if the model is undamped)

    Returns:
        Trajectory with channels q, p, X (zero-point units)

    Raises:
        LengthError: If fewer than two samples are requested
    """
    count = int(round(duration * sample_rate))
    if count < 2:
        raise LengthError("duration * sample_rate must be >= 2")
    discrete = discretize(model, 1.0 / sample_rate)
    rng = np.random.default_rng(seed)

    if initial_state is None:
        if model.gamma_m > 0:
            initial_state = rng.multivariate_normal(
                np.zeros(2), steady_state_covariance(model), method="eigh")
        else:
            initial_state = np.zeros(2)
    initial_state = np.asarray(initial_state, dtype=float)

    draws = rng.multivariate_normal(np.zeros(3), discrete.joint_cov, size=count,
                                    method="eigh")
    states = _propagate(discrete.transition, initial_state, draws[:-1, :2])
    measured = states @ discrete.measurement_row[0] + draws[:, 2]

    logger.debug("Simulated %d samples at %.6g Hz", count, sample_rate)
    return Trajectory(
        sample_rate=sample_rate,
        channels={"q": states[:, 0], "p": states[:, 1], "X": measured},
        seed=seed,
    )


def simulate_modulated(params: SystemParams, drift: np.ndarray, sample_rate: float,
                       seed: Optional[int] = None, photon_map=None,
                       imprecision: bool = True,
                       options: ModelOptions = ModelOptions()) -> Trajectory:
    """
    Trajectory whose resonance follows a slowly modulated detuning

    The detuning is delta(t) = delta + G * drift(t) / kappa; the resonance follows the
    optical spring at each sample. The oscillator is propagated as a complex envelope
    z = q - i p with a per-sample rotation, which is exact for constant frequency and
    holds for Q >> 1 when the frequency changes slowly. Stationary variance and the
    measurement imprecision are those of the mean model.

    Args:
        params: Parameter set at the mean detuning
        drift: Slow mirror displacement (m), one value per sample
        sample_rate: Samples per second
        seed: Generator seed
        photon_map: Optional power-to-photon map for the spring (see spring module)
        imprecision: Add the readout imprecision of the mean model
        options: Noise placement switches

    Returns:
        Trajectory with channels displacement (m, drift included), drift (m),
        resonance_hz (true track), q and p
    """
    from .spring import resonance_timeseries_model

    drift = np.asarray(drift, dtype=float)
    count = drift.size
    if count < 2:
        raise LengthError("drift series needs at least 2 samples")
    dt = 1.0 / sample_rate
    model = build_model(params, options)
    variance = steady_state_covariance(model)[0, 0]
    track = resonance_timeseries_model(drift, params, params.delta, photon_map=photon_map)
    omega = 2.0 * math.pi * track.resonance_hz
    gamma = params.gamma_m

    rng = np.random.default_rng(seed)
    decay = math.exp(-gamma * dt)
    kick_scale = math.sqrt(variance * (1.0 - decay))
    kicks = kick_scale * (rng.standard_normal(count) + 1j * rng.standard_normal(count))
    start = math.sqrt(variance) * (rng.standard_normal() + 1j * rng.standard_normal())

    steps = (1j * omega - gamma / 2.0) * dt
    envelope = np.empty(count, dtype=complex)
    # chunks keep exp(-Lambda) well inside floating-point range
    chunk = max(1, int(30.0 / max(gamma * dt / 2.0, 1e-300)))
    current = start
    for begin in range(0, count, chunk):
        end = min(begin + chunk, count)
        local = steps[begin:end]
        exponent = np.concatenate([[0.0], np.cumsum(local)[:-1]])
        weights = np.exp(-(exponent + local))
        accumulated = np.concatenate([[0.0], np.cumsum(weights * kicks[begin:end])[:-1]])
        envelope[begin:end] = np.exp(exponent) * (current + accumulated)
        current = envelope[end - 1] * np.exp(local[-1]) + kicks[end - 1]

    q = envelope.real
    p = -envelope.imag
    measured_q = q
    if imprecision:
        gain = model.position_gain
        if gain != 0:
            noise_std = math.sqrt(model.measurement_noise / dt) / abs(gain)
            measured_q = q + noise_std * rng.standard_normal(count)
    displacement = drift + params.x_zpf * measured_q
    return Trajectory(
        sample_rate=sample_rate,
        channels={
            "displacement": displacement,
            "drift": drift,
            "resonance_hz": track.resonance_hz,
            "q": q,
            "p": p,
        },
        seed=seed,
        metadata={"mean_delta": params.delta, "clamp_fraction": track.clamp_fraction},
    )
