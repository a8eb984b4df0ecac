"""
Tests for the linearized dynamics and the exact-discretization simulator
"""

import numpy as np
import pytest
from scipy.linalg import expm

from mechsqueeze.core.langevin import (
    ModelOptions,
    StateSpaceModel,
    Trajectory,
    build_model,
    discretize,
    simulate,
    simulate_modulated,
    steady_state_covariance,
)
from mechsqueeze.core.params import table1_params
from mechsqueeze.errors import LengthError, SingularityError, StepSizeError
from mechsqueeze.utils.helpers import TWO_PI


class TestModel:

    def test_drift_matrix(self, table1, table1_model):
        assert table1_model.omega_m == pytest.approx(table1.omega_m)
        assert table1_model.gamma_m == pytest.approx(table1.gamma_m)

    def test_position_gain(self, table1_model):
        # -8 g_m delta sqrt(eta) / sqrt(kappa) with g_m < 0
        assert table1_model.position_gain == pytest.approx(14.0, rel=0.05)

    def test_input_noise_in_vacuum_units(self, table1, table1_model):
        assert np.diag(table1_model.input_psd) == pytest.approx(
            [2 * table1.n_th + 1, 2 * table1.N_th + 1, 2 * table1.N_th + 1])

    def test_amplitude_only_optical_noise(self, table1):
        model = build_model(table1, ModelOptions(optical_noise="amplitude"))
        assert model.input_psd[2, 2] == 1.0

    def test_unknown_noise_placement(self):
        with pytest.raises(ValueError):
            ModelOptions(optical_noise="phase")

    def test_no_position_gain_at_zero_detuning(self):
        params = table1_params(delta_over_kappa=0.0)
        assert build_model(params).position_gain == 0.0


class TestDiscretization:

    def test_transition_is_matrix_exponential(self, table1_model):
        dt = 1.0 / 20000.0
        discrete = discretize(table1_model, dt)
        assert discrete.transition == pytest.approx(expm(table1_model.drift * dt), rel=1e-10)

    def test_process_covariance_preserves_steady_state(self, table1_model):
        discrete = discretize(table1_model, 1.0 / 20000.0)
        steady = steady_state_covariance(table1_model)
        propagated = (discrete.transition @ steady @ discrete.transition.T
                      + discrete.process_cov)
        np.testing.assert_allclose(propagated, steady, rtol=1e-8,
                                   atol=1e-8 * np.abs(steady).max())

    def test_measurement_variance_scales_with_rate(self, table1_model):
        slow = discretize(table1_model, 1e-4)
        fast = discretize(table1_model, 5e-5)
        assert fast.measurement_var == pytest.approx(2.0 * slow.measurement_var)

    def test_too_coarse_step(self, table1_model):
        with pytest.raises(StepSizeError):
            discretize(table1_model, 1.0 / 100.0)

    def test_non_positive_step(self, table1_model):
        with pytest.raises(StepSizeError):
            discretize(table1_model, 0.0)

    def test_undamped_has_no_steady_state(self):
        omega = TWO_PI * 280.0
        model = StateSpaceModel(
            drift=np.array([[0.0, omega], [-omega, 0.0]]),
            noise_map=np.zeros((2, 3)),
            measurement_row=np.array([[1.0, 0.0]]),
            feedthrough=np.array([[0.0, 1.0, 0.0]]),
            input_psd=np.eye(3),
        )
        with pytest.raises(SingularityError):
            steady_state_covariance(model)


class TestSimulate:

    def test_same_seed_same_trajectory(self, table1_model):
        first = simulate(table1_model, 0.5, 20000.0, seed=7)
        second = simulate(table1_model, 0.5, 20000.0, seed=7)
        other = simulate(table1_model, 0.5, 20000.0, seed=8)
        for name in ("q", "p", "X"):
            np.testing.assert_array_equal(first[name], second[name])
        assert not np.array_equal(first["X"], other["X"])

    def test_channels_and_length(self, table1_model):
        trajectory = simulate(table1_model, 0.25, 20000.0, seed=1)
        assert set(trajectory.channels) == {"q", "p", "X"}
        assert len(trajectory) == 5000
        assert trajectory.duration == pytest.approx(0.25)
        assert list(trajectory.to_frame().columns) == ["t", "q", "p", "X"]

    def test_initial_state_is_respected(self, table1_model):
        trajectory = simulate(table1_model, 0.01, 20000.0, seed=3,
                              initial_state=np.array([10.0, -5.0]))
        assert trajectory["q"][0] == 10.0
        assert trajectory["p"][0] == -5.0

    def test_too_short(self, table1_model):
        with pytest.raises(LengthError):
            simulate(table1_model, 1e-5, 20000.0)

    @pytest.mark.slow
    def test_variance_matches_lyapunov_solution(self):
        # low Q keeps the correlation time short so 100 s averages well
        model = build_model(table1_params(Q=20.0))
        steady = steady_state_covariance(model)
        trajectory = simulate(model, 100.0, 5000.0, seed=2024)
        assert np.var(trajectory["q"]) == pytest.approx(steady[0, 0], rel=0.05)
        assert np.var(trajectory["p"]) == pytest.approx(steady[1, 1], rel=0.05)


class TestTrajectory:

    def test_channel_lengths_must_match(self):
        with pytest.raises(LengthError):
            Trajectory(sample_rate=10.0, channels={"a": np.zeros(3), "b": np.zeros(4)})


class TestModulatedSimulation:

    def test_static_drift_sits_at_spring_resonance(self, table1):
        drift = np.zeros(20000)
        trajectory = simulate_modulated(table1, drift, 10000.0, seed=5)
        assert set(trajectory.channels) == {"displacement", "drift", "resonance_hz",
                                            "q", "p"}
        assert np.ptp(trajectory["resonance_hz"]) == 0.0
        assert trajectory["resonance_hz"][0] == pytest.approx(283.8, abs=0.5)
        assert trajectory.metadata["clamp_fraction"] == 0.0

    def test_drift_moves_resonance(self, table1):
        t = np.arange(20000) / 10000.0
        drift = 1.7e-12 * np.sin(TWO_PI * 0.5 * t)
        trajectory = simulate_modulated(table1, drift, 10000.0, seed=5, imprecision=False)
        np.testing.assert_allclose(trajectory["displacement"] - drift,
                                   table1.x_zpf * trajectory["q"], rtol=1e-12,
                                   atol=1e-25)
        # G < 0: positive displacement lowers the detuning and the resonance
        peak = int(np.argmax(drift))
        trough = int(np.argmin(drift))
        assert trajectory["resonance_hz"][peak] < trajectory["resonance_hz"][trough]
