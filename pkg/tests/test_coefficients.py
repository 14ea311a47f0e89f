"""Tests for the coupling constants and the probe noise budget."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sympy import Rational
from sympy.physics.wigner import wigner_6j

from qmit.coefficients import (
    OpticalParams,
    SingularDetuningError,
    StroboscopicParams,
    ZeroCouplingError,
    back_action_factor,
    budget_tilde,
    continuous_snr_denominator,
    eta,
    f3_pn_suppression_ratio,
    faraday_beta,
    improvement_ratio,
    kappa_squared,
    minimize_snr_denominator,
    sensitivity,
    sinc,
    sql_optimum,
    stroboscopic_noise_budget,
    vector_polarizability_f3,
    vector_polarizability_f4,
)
from qmit.constants import DEFAULT_CONSTANTS

I_NUC = Rational(7, 2)


def _rank1_weight(f, fp):
    """Rank-1 light-shift weight of the F -> F' line of the D2 transition."""
    return ((-1) ** (f + fp + 1) * (2 * fp + 1) * wigner_6j(1, 1, 1, f, f, fp)
            * wigner_6j(f, fp, 1, Rational(3, 2), Rational(1, 2), I_NUC) ** 2)


def oracle_a1(f, detuning_by_fp, ref_fp, sign):
    """Vector polarizability from angular-momentum algebra, normalized to +-1 far off resonance."""
    weights = {fp: _rank1_weight(f, fp) for fp in detuning_by_fp}
    total = sum(weights.values())
    ref = detuning_by_fp[ref_fp]
    return sign * sum(float(w / total) * ref / detuning_by_fp[fp] for fp, w in weights.items())


def f4_detunings(d):
    c = DEFAULT_CONSTANTS
    return {5: d, 4: d - c["excited_hfs_45_hz"], 3: d - c["excited_hfs_35_hz"]}


def f3_detunings(d):
    c = DEFAULT_CONSTANTS
    return {2: d, 3: d + c["excited_hfs_23_hz"], 4: d + c["excited_hfs_24_hz"]}


class TestSincAndDutyFactors:
    def test_sinc_at_zero(self):
        assert sinc(0.0) == 1.0

    def test_sinc_matches_numpy(self):
        x = np.linspace(-7, 7, 101)
        np.testing.assert_allclose(sinc(x), np.sinc(x / np.pi), rtol=1e-14, atol=1e-15)

    def test_eta_limits(self):
        assert eta(0.0) == 2.0
        assert eta(1.0) == pytest.approx(1.0, abs=1e-15)

    def test_back_action_limits(self):
        assert back_action_factor(0.0) == 0.0
        assert back_action_factor(1.0) == pytest.approx(1.0, abs=1e-15)

    def test_back_action_monotone_in_duty_cycle(self):
        d = np.linspace(0, 1, 50)
        assert np.all(np.diff(back_action_factor(d)) > 0)


class TestFaradayCoefficients:
    def test_f4_regression(self):
        assert vector_polarizability_f4(OpticalParams.for_f4(-1.82e9)) == pytest.approx(1.079, abs=1e-3)

    def test_f3_regression(self):
        assert vector_polarizability_f3(OpticalParams.for_f3(6.76e9)) == pytest.approx(-1.032, abs=2e-3)

    @pytest.mark.parametrize("d", [-0.9e9, -1.82e9, -3.1e9, -20e9])
    def test_f4_matches_angular_momentum_oracle(self, d):
        a1 = vector_polarizability_f4(OpticalParams.for_f4(d))
        assert a1 == pytest.approx(oracle_a1(4, f4_detunings(d), 5, +1), rel=1e-12)

    @pytest.mark.parametrize("d", [1.1e9, 6.76e9, 30e9])
    def test_f3_matches_angular_momentum_oracle(self, d):
        a1 = vector_polarizability_f3(OpticalParams.for_f3(d))
        assert a1 == pytest.approx(oracle_a1(3, f3_detunings(d), 2, -1), rel=1e-12)

    def test_far_detuned_limits(self):
        assert vector_polarizability_f4(OpticalParams.for_f4(-1e15)) == pytest.approx(1.0, abs=1e-6)
        assert vector_polarizability_f3(OpticalParams.for_f3(1e15)) == pytest.approx(-1.0, abs=1e-6)

    def test_pn_suppression_ratio(self):
        r = f3_pn_suppression_ratio(OpticalParams.for_f4(-1.82e9), OpticalParams.for_f3(6.76e9))
        assert r == pytest.approx(15.0, abs=1.0)

    def test_singular_detuning(self):
        with pytest.raises(SingularDetuningError):
            vector_polarizability_f4(OpticalParams(detuning_hz=DEFAULT_CONSTANTS["excited_hfs_45_hz"]))

    def test_sign_conventions_enforced(self):
        with pytest.raises(ValueError):
            OpticalParams.for_f4(1e9)
        with pytest.raises(ValueError):
            OpticalParams.for_f3(-1e9)

    def test_beta_quadratic_in_inverse_detuning_far_off(self):
        b1 = faraday_beta(OpticalParams.for_f4(-100e9))
        b2 = faraday_beta(OpticalParams.for_f4(-200e9))
        assert b1 / b2 == pytest.approx(2.0, rel=1e-2)

    def test_kappa_squared_scaling(self):
        opt = OpticalParams.for_f4()
        s = StroboscopicParams(0.15, 1e-3)
        k1 = kappa_squared(opt, s, 1e9)
        assert kappa_squared(opt, s, 2e9) == pytest.approx(2 * k1, rel=1e-14)
        assert kappa_squared(opt.replace(photon_flux=3e15), s, 1e9) == pytest.approx(3 * k1, rel=1e-14)


class TestNoiseBudget:
    def test_zero_duty_cycle_has_no_back_action(self):
        b = stroboscopic_noise_budget(StroboscopicParams(0.0, 1e-3, 5.0))
        assert b.ban == 0.0

    def test_budget_formula(self):
        s = StroboscopicParams(0.5, 1e-3, 3.0)
        b = stroboscopic_noise_budget(s, sn_scale=2.0, en=0.1)
        e = 1 + math.sin(math.pi / 2) / (math.pi / 2)
        c = (1 - 2 / math.pi) / (1 + 2 / math.pi)
        assert b.sn == pytest.approx(2 * e, rel=1e-14)
        assert b.pn == pytest.approx(2 * e * 3, rel=1e-14)
        assert b.ban == pytest.approx(2 * e * 9 * c / 3, rel=1e-14)
        assert b.total == pytest.approx(2 * e * (1 + 3 + 9 * c / 3) + 0.1, rel=1e-14)

    @given(st.floats(0, 1), st.floats(0, 50))
    def test_tilde_parameterization_agrees(self, d, k2):
        s = StroboscopicParams(d, 1e-3, k2)
        assert budget_tilde(s) == pytest.approx(stroboscopic_noise_budget(s).total, rel=1e-12)

    def test_negative_components_rejected(self):
        with pytest.raises(ValueError):
            StroboscopicParams(1.2, 1e-3)
        with pytest.raises(ValueError):
            StroboscopicParams(0.5, 1e-3, -1.0)


class TestStandardQuantumLimit:
    def test_analytic_optimum(self):
        sql = sql_optimum()
        assert sql.kappa_opt**4 == pytest.approx(12.0, rel=1e-14)
        assert sql.variance_ratio == pytest.approx(1 + 2 / math.sqrt(3), abs=1e-12)
        assert sql.std_ratio == pytest.approx(1.47, abs=0.005)

    def test_numerical_minimizer(self):
        assert minimize_snr_denominator() ** 4 == pytest.approx(12.0, abs=1e-2)

    def test_denominator_is_minimal_at_optimum(self):
        k = sql_optimum().kappa_opt
        ks = np.linspace(0.5, 4, 400)
        assert np.all(continuous_snr_denominator(ks) >= continuous_snr_denominator(k) - 1e-15)


class TestSensitivityRatios:
    def test_improvement_ratio_values(self):
        xi2 = 10 ** (-0.18)
        assert improvement_ratio(1.75, xi2) == pytest.approx(0.89, abs=0.005)
        assert improvement_ratio(1.2 * 1.75, xi2) == pytest.approx(0.88, abs=0.005)

    def test_no_squeezing_no_gain(self):
        assert improvement_ratio(3.0, 1.0) == 1.0

    @settings(max_examples=50)
    @given(st.floats(0.01, 100), st.floats(0.01, 0.99))
    def test_squeezing_always_helps(self, pn, xi2):
        assert improvement_ratio(pn, xi2) < 1.0

    def test_sensitivity_requires_coupling(self):
        with pytest.raises(ZeroCouplingError):
            sensitivity(StroboscopicParams(0.15, 1e-3, 0.0))

    def test_sensitivity_improves_with_squeezing(self):
        s = StroboscopicParams(0.15, 1e-3, 2.0)
        assert sensitivity(s, 0.5) < sensitivity(s, 1.0)
