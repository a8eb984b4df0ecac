"""
Tests for the optical-spring curve, its fit, inversion and detuning identification
"""

import warnings

import numpy as np
import pytest

from mechsqueeze.core import dsp
from mechsqueeze.core.langevin import simulate_modulated
from mechsqueeze.core.spring import (
    FixedPhotonMap,
    LorentzianPhotonMap,
    SpringMeasurement,
    branch_partner,
    count_resonance,
    detuning_from_counts,
    fit_spring,
    invert_spring,
    photon_map_from_name,
    power_compensate,
    resonance_timeseries_model,
    spring_curve,
)
from mechsqueeze.errors import (ConfigError, DegenerateBinningError, DomainError,
                                LengthError, RankDeficiencyWarning)
from mechsqueeze.utils.helpers import TWO_PI

MEAN_DELTA = 0.0292


def synthetic_measurement(params, offsets, photon_map=None, sigma=0.5):
    frequencies = spring_curve(MEAN_DELTA + offsets, params, photon_map)
    return SpringMeasurement(offsets, frequencies, np.full(offsets.size, sigma),
                             incident_power=0.0)


class TestSpringCurve:

    def test_operating_point(self, table1):
        assert spring_curve(MEAN_DELTA, table1) == pytest.approx(283.8, abs=0.5)

    def test_vectorized(self, table1):
        curve = spring_curve(np.array([0.0, 0.01, 0.5]), table1)
        assert curve[0] == 0.0
        assert np.all(np.diff(curve) > 0)

    def test_negative_detuning(self, table1):
        with pytest.raises(DomainError):
            spring_curve(-0.1, table1)

    def test_lorentzian_map_lowers_far_branch(self, table1):
        fixed = spring_curve(1.0, table1)
        lorentzian = spring_curve(1.0, table1, LorentzianPhotonMap())
        ratio = (1 + 4 * MEAN_DELTA ** 2) / 5.0
        assert lorentzian == pytest.approx(fixed * np.sqrt(ratio), rel=1e-12)

    def test_power_compensation(self):
        assert power_compensate(100.0, 0.01, 0.04) == pytest.approx(200.0)
        np.testing.assert_allclose(power_compensate(np.array([1.0, 4.0]), 4.0, 1.0),
                                   [0.5, 2.0])
        with pytest.raises(DomainError):
            power_compensate(100.0, 0.0, 0.04)

    def test_photon_map_names(self):
        assert isinstance(photon_map_from_name("fixed"), FixedPhotonMap)
        assert photon_map_from_name("lorentzian", 1.0).efficiency_sensitive
        with pytest.raises(ConfigError):
            photon_map_from_name("gaussian")


class TestFit:

    def test_recovers_coupling_and_detuning(self, table1):
        measurement = synthetic_measurement(table1, np.linspace(-0.01, 0.02, 12))
        result = fit_spring(measurement, table1,
                            initial_guess={"G": 0.9 * table1.G, "mean_delta": 0.025})
        assert result.mean_delta == pytest.approx(MEAN_DELTA, rel=1e-6)
        assert result.G == pytest.approx(table1.G, rel=1e-6)
        assert result.residual_norm < 1e-6
        assert result.free_parameters == ("G", "mean_delta")
        assert result.to_dict()["covariance_order"] == ["G", "eta", "mean_delta"]

    def test_errors_scale_with_noise(self, table1, rng):
        offsets = np.linspace(-0.01, 0.02, 12)
        measurement = synthetic_measurement(table1, offsets, sigma=2.0)
        noisy = SpringMeasurement(
            offsets, measurement.resonance_samples + 2.0 * rng.standard_normal(12),
            measurement.resonance_errors, 0.0)
        result = fit_spring(noisy, table1)
        assert result.mean_delta == pytest.approx(MEAN_DELTA, abs=5 * result.errors["mean_delta"])
        assert result.errors["eta"] == 0.0
        assert result.errors["G"] > 0.0

    def test_efficiency_not_identifiable_with_fixed_map(self, table1):
        measurement = synthetic_measurement(table1, np.linspace(-0.01, 0.02, 6))
        with pytest.warns(RankDeficiencyWarning):
            result = fit_spring(measurement, table1, fit_efficiency=True)
        assert "eta" not in result.free_parameters

    def test_efficiency_degenerate_with_coupling(self, table1):
        photon_map = LorentzianPhotonMap(efficiency_exponent=1.0)
        measurement = synthetic_measurement(table1, np.linspace(-0.01, 0.02, 8), photon_map)
        with pytest.warns(RankDeficiencyWarning):
            fit_spring(measurement, table1, photon_map=photon_map)

    def test_needs_three_detunings(self, table1):
        measurement = synthetic_measurement(table1, np.array([0.0, 0.0, 0.01]))
        with pytest.raises(LengthError):
            fit_spring(measurement, table1)

    def test_measurement_validation(self):
        with pytest.raises(LengthError):
            SpringMeasurement(np.zeros(3), np.zeros(2), np.ones(3), 0.0)
        with pytest.raises(ConfigError):
            SpringMeasurement(np.zeros(3), np.zeros(3), np.zeros(3), 0.0)


class TestInversion:

    def test_small_branch(self, table1):
        frequency = spring_curve(MEAN_DELTA, table1)
        assert invert_spring(frequency, table1) == pytest.approx(MEAN_DELTA, rel=1e-9)

    def test_partner_with_fixed_photons(self, table1):
        assert branch_partner(MEAN_DELTA, table1) == pytest.approx(1 / (4 * MEAN_DELTA),
                                                                   rel=1e-6)

    def test_partner_with_lorentzian_photons(self, table1):
        photon_map = LorentzianPhotonMap()
        partner = branch_partner(MEAN_DELTA, table1, photon_map)
        assert partner == pytest.approx(1.15, rel=0.02)
        assert branch_partner(partner, table1, photon_map) == pytest.approx(MEAN_DELTA,
                                                                            rel=1e-6)

    def test_above_maximum(self, table1):
        with pytest.raises(DomainError):
            invert_spring(1e6, table1)

    def test_unknown_branch(self, table1):
        with pytest.raises(ConfigError):
            invert_spring(100.0, table1, branch="middle")


class TestResonanceTrack:

    def test_clamps_negative_detuning(self, table1):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            track = resonance_timeseries_model(np.array([0.0, 2e-11]), table1, MEAN_DELTA)
        assert track.clamp_fraction == 0.5
        assert track.resonance_hz[1] == 0.0
        assert track.delta[0] == pytest.approx(MEAN_DELTA)

    def test_negative_mean(self, table1):
        with pytest.raises(DomainError):
            resonance_timeseries_model(np.zeros(3), table1, -0.01)


class TestDetuningFromCounts:

    def test_exact_counts(self, table1):
        displacement = np.linspace(-1.7e-12, 1.7e-12, 3000)
        counted = spring_curve(MEAN_DELTA + table1.G * displacement / table1.kappa, table1)
        estimate = detuning_from_counts(counted, displacement, table1)
        assert estimate.branch == "small"
        assert estimate.mean_delta == pytest.approx(MEAN_DELTA, rel=1e-6)
        assert set(estimate.candidates) <= {"small", "large"}
        assert estimate.bin_frequency.size == 3

    def test_constant_displacement(self, table1):
        with pytest.raises(DegenerateBinningError):
            detuning_from_counts(np.full(30, 280.0), np.zeros(30), table1)

    def test_misaligned(self, table1):
        with pytest.raises(LengthError):
            detuning_from_counts(np.zeros(30), np.zeros(29), table1)


class TestCountingPipeline:

    def test_recovers_modulated_track(self, table1):
        fs, duration = 1e4, 60.0
        t = np.arange(int(fs * duration)) / fs
        drift = 1.7e-12 * np.sin(TWO_PI * 0.05 * t)
        trajectory = simulate_modulated(table1, drift, fs, seed=20121107)

        counted = count_resonance(trajectory["displacement"], fs, band=(170.0, 360.0),
                                  lowpass_hz=8.2, n_bins=25)
        truth = dsp.bin_average(trajectory["resonance_hz"], 25)
        assert counted.binned_hz.size == 25
        assert np.sqrt(np.mean((counted.binned_hz - truth) ** 2)) < 2.0

        estimate = detuning_from_counts(counted.instantaneous_hz, counted.slow_displacement,
                                        table1)
        assert estimate.mean_delta == pytest.approx(MEAN_DELTA, rel=0.05)
        assert estimate.branch == "small"
