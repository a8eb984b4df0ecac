"""
Tests for the parameter registry
"""

import math
import warnings

import pytest

from mechsqueeze.core.params import (
    PUBLISHED_PARAMETERS,
    PhysicalConstants,
    cooled_temperature_prediction,
    derive_confined_frequency,
    derive_coupling,
    occupancy_from_temperature,
    occupancy_from_variance,
    params_from_mapping,
    photons_from_frequency,
    spring_frequency,
    table1_params,
    temperature_from_occupancy,
)
from mechsqueeze.errors import DomainError, ParameterError, RegimeWarning
from mechsqueeze.utils.helpers import TWO_PI


class TestConfinedFrequency:

    def test_published_set_gives_measured_resonance(self, table1):
        omega = derive_confined_frequency(table1.optical, table1.mechanical, table1.constants)
        assert omega / TWO_PI == pytest.approx(280.0, abs=10.0)

    def test_zero_detuning_vanishes(self, table1):
        assert spring_frequency(0.0, table1.G, table1.n_c, table1.kappa, table1.mass) == 0.0

    def test_maximum_at_half_linewidth(self, table1):
        deltas = [0.3, 0.45, 0.5, 0.55, 0.7]
        values = [spring_frequency(d, table1.G, table1.n_c, table1.kappa, table1.mass)
                  for d in deltas]
        assert max(values) == values[2]

    def test_negative_detuning_rejected(self, table1):
        with pytest.raises(DomainError):
            spring_frequency(-0.01, table1.G, table1.n_c, table1.kappa, table1.mass)

    def test_photon_number_inverts_spring(self, table1):
        omega = derive_confined_frequency(table1.optical, table1.mechanical, table1.constants)
        photons = photons_from_frequency(omega, table1.optical, table1.mechanical,
                                         table1.constants)
        assert photons == pytest.approx(table1.n_c, rel=1e-10)

    def test_derived_when_resonance_omitted(self):
        params = table1_params(omega_m_hz=None)
        assert params.omega_m / TWO_PI == pytest.approx(283.8, abs=0.5)


class TestCoupling:

    def test_zero_point_amplitude(self, table1):
        assert table1.x_zpf == pytest.approx(6.2e-17, rel=0.02)

    def test_zero_point_product_is_half_hbar(self, table1):
        assert table1.x_zpf * table1.p_zpf == pytest.approx(table1.hbar / 2.0, rel=1e-12)

    def test_confined_coupling(self, table1):
        assert table1.g_m == pytest.approx(-TWO_PI * 3.2e4, rel=0.1)
        expected = table1.G * math.sqrt(table1.n_c) * table1.x_zpf
        assert table1.g_m == pytest.approx(expected, rel=1e-12)

    def test_coupling_scales_with_frequency(self, table1):
        doubled = derive_coupling(table1.optical, table1.mechanical, table1.constants,
                                  2.0 * table1.omega_m)
        assert doubled.zero_point_amplitude == pytest.approx(table1.x_zpf / math.sqrt(2.0))
        assert doubled.confined_coupling == pytest.approx(table1.g_m / math.sqrt(2.0))

    def test_coupling_needs_positive_frequency(self, table1):
        with pytest.raises(DomainError):
            derive_coupling(table1.optical, table1.mechanical, table1.constants, 0.0)

    def test_cooperativities(self, table1):
        assert table1.derived.cooperativity == pytest.approx(2.2e3, rel=0.05)
        assert table1.derived.quantum_cooperativity == pytest.approx(0.0027, rel=0.3)

    def test_quality_factor_consistent(self, table1):
        assert table1.mechanical.quality_factor == pytest.approx(
            table1.omega_m / table1.gamma_m, rel=1e-9)

    def test_with_noise_recomputes_quantum_cooperativity(self, table1):
        hotter = table1.with_noise(n_th=1.6e6)
        assert hotter.n_th == 1.6e6
        assert hotter.derived.cooperativity == pytest.approx(table1.derived.cooperativity)
        assert hotter.derived.quantum_cooperativity == pytest.approx(
            table1.derived.quantum_cooperativity / 2.0)
        assert hotter.N_th == table1.N_th


class TestValidation:

    def test_published_set_passes_without_warnings(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", RegimeWarning)
            params = table1_params()
        assert params.regime_warnings == ()
        assert params.kappa / params.omega_m == pytest.approx(5.9e3, rel=0.02)

    def test_large_detuning_warns(self):
        with pytest.warns(RegimeWarning):
            params = table1_params(delta_over_kappa=1.2)
        assert any("small-detuning" in note for note in params.regime_warnings)

    def test_efficiency_above_one_names_field(self):
        with pytest.raises(ParameterError) as excinfo:
            table1_params(eta=1.5)
        assert excinfo.value.field == "eta"

    def test_non_positive_linewidth(self):
        with pytest.raises(ParameterError) as excinfo:
            table1_params(kappa_hz=0.0)
        assert excinfo.value.field == "kappa_hz"

    def test_missing_key(self):
        mapping = dict(PUBLISHED_PARAMETERS)
        del mapping["mass_mg"]
        with pytest.raises(ParameterError) as excinfo:
            params_from_mapping(mapping)
        assert excinfo.value.field == "mass_mg"

    def test_non_numeric_value(self):
        mapping = dict(PUBLISHED_PARAMETERS, Q="high")
        with pytest.raises(ParameterError, match="not a number"):
            params_from_mapping(mapping)


class TestOccupancy:

    def test_occupancy_from_mode_temperature(self):
        params = table1_params(n_th=None)
        assert params.n_th == pytest.approx(8.0e5, rel=0.05)

    def test_direct_occupancy_wins(self):
        params = table1_params(displacement_variance_m2=1.0)
        assert params.n_th == PUBLISHED_PARAMETERS["n_th"]

    def test_occupancy_from_displacement_variance(self, table1):
        variance = table1.x_zpf ** 2 * (2.0 * 8.0e5 + 1.0)
        assert occupancy_from_variance(variance, table1.x_zpf) == pytest.approx(8.0e5)
        params = table1_params(n_th=None, displacement_variance_m2=variance)
        assert params.n_th == pytest.approx(8.0e5, rel=1e-9)

    def test_temperature_round_trip(self, table1):
        constants = PhysicalConstants()
        n_th = occupancy_from_temperature(0.011, table1.omega_m, constants)
        assert temperature_from_occupancy(n_th, table1.omega_m, constants) == pytest.approx(
            0.011, rel=1e-9)

    def test_cooled_temperature_without_bare_frequency(self, table1):
        constant = cooled_temperature_prediction(table1, structural=False)
        assert constant == pytest.approx(300.0 * 4.74e-5 / 1.12, rel=1e-6)
        # no bare frequency in the set: structural damping falls back to Gamma
        assert cooled_temperature_prediction(table1) == pytest.approx(constant)

    def test_structural_damping_scales_prediction(self):
        params = table1_params(Omega_hz=172.0)
        ratio = (cooled_temperature_prediction(params)
                 / cooled_temperature_prediction(params, structural=False))
        assert ratio == pytest.approx(172.0 / 280.0, rel=1e-9)


class TestParameterFile:

    def test_file_matches_published_set(self, params_file, table1):
        from mechsqueeze.core.loader import DataLoader

        loaded = DataLoader().load_params(params_file)
        assert loaded.omega_m == pytest.approx(table1.omega_m, rel=1e-12)
        assert loaded.g_m == pytest.approx(table1.g_m, rel=1e-12)
        assert loaded.calibration_m_per_v == pytest.approx(-2.3e-10)
        assert loaded.uncertainties["n_th"] == pytest.approx(1.8e5)

    def test_mapping_round_trip(self, table1):
        rebuilt = params_from_mapping(table1.to_mapping())
        assert rebuilt.omega_m == pytest.approx(table1.omega_m, rel=1e-12)
        assert rebuilt.delta == pytest.approx(table1.delta, rel=1e-12)

    def test_dict_reports_hertz(self, table1):
        report = table1.to_dict()
        assert report["derived"]["omega_m_hz"] == pytest.approx(280.0)
        assert report["derived"]["g_hz"] is None
        assert report["inputs"]["n_th"] == 8.0e5
