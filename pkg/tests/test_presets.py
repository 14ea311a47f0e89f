"""Tests for the calibrated operating points."""

import dataclasses
import math

import pytest

from qmit import presets
from qmit.simulator import correlated_pair_covariance, predicted_xi2_db
from qmit.tomography import predicted_center_std, scan_positions


@pytest.fixture(scope="module")
def solved():
    return presets.recalibrate()


class TestCalibration:
    def test_frozen_values_match_solvers(self, solved):
        frozen = presets.frozen()
        for field in dataclasses.fields(frozen):
            assert getattr(solved, field.name) == pytest.approx(
                getattr(frozen, field.name), rel=1e-8), field.name

    def test_demo_squeezing(self):
        assert predicted_xi2_db(presets.squeezing_demo()) == pytest.approx(-4.6, abs=1e-6)

    def test_gap_squeezing(self):
        assert predicted_xi2_db(presets.gap_demo()) == pytest.approx(-3.0, abs=1e-6)

    def test_mit_projection_noise_ratio(self):
        p = presets.mit()
        ratio = presets.pn_reference(p) / correlated_pair_covariance(p).sn_b
        assert ratio == pytest.approx(1.75, rel=1e-6)

    def test_mit_squeezing_and_snr(self):
        p = presets.mit(presets.mit_rf_pulse())
        m = correlated_pair_covariance(p)
        assert 10 * math.log10(m.xi2(presets.pn_reference(p))) == pytest.approx(-1.8, abs=1e-6)
        assert m.mean[1] / math.sqrt(m.var_b) == pytest.approx(0.72, rel=1e-6)
        assert m.mean[1] / math.sqrt(m.cond_var) == pytest.approx(1.26, rel=1e-6)

    def test_scan_field_gives_target_std(self):
        p = presets.mit(presets.mit_rf_pulse(1.0, 0.0))
        m = correlated_pair_covariance(p)
        noise = math.sqrt(m.var_b / presets.SCAN_REPS)
        std = predicted_center_std(scan_positions(presets.SCAN_POSITIONS, presets.SCAN_STEP),
                                   0.0, presets.SCAN_SIGMA,
                                   presets.SCAN_PEAK_FIELD * m.mean[1], noise)
        assert std == pytest.approx(presets.TARGET_SCAN_STD, rel=1e-6)

    def test_probe_rate_scales_with_coupling(self):
        assert presets.mit_probe_rate(2 * presets.DEMO_KAPPA2) == pytest.approx(
            2 * presets.DEMO_PROBE_RATE)

    def test_signal_per_tesla_requires_rf(self):
        with pytest.raises(ValueError):
            presets.signal_per_tesla(presets.mit())
