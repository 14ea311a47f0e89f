"""Tests for the Gaussian-state shot simulator and its exact moments."""

import math

import mpmath
import numpy as np
import pytest

from qmit import presets
from qmit.coefficients import StroboscopicParams, stroboscopic_noise_budget
from qmit.simulator import (
    DecoherenceModel,
    SequenceParams,
    ShotBatch,
    SimulationError,
    SimulationParams,
    _bin_transition,
    correlated_pair_covariance,
    css_projection_noise,
    n_draws,
    simulate_batch,
    simulate_seeds,
    simulate_shot,
    sweep_gap,
)
from qmit.rng import record_seeds
from qmit.spin_dynamics import EnsembleParams, RfPulseParams


def ideal_params(kappa2=4.0, duty=0.15, tau_a=200e-6, tau_b=200e-6, bin_width=10e-6, gap=0.0):
    """No decoherence, full polarization: the simulator must reproduce the noise budget."""
    return SimulationParams(
        EnsembleParams(n_atoms=1e9, polarization=1.0, t1=math.inf, t2=math.inf),
        StroboscopicParams(duty, tau_a, kappa2),
        SequenceParams(tau_a=tau_a, gap=gap, tau_b=tau_b, bin_width=bin_width),
        DecoherenceModel(t2=math.inf, t1=math.inf),
    )


def ou_bin_moments(dt, gamma, sigma2):
    """Closed-form moments of (x(dt), integral of x) for an OU process started at zero.

    Evaluated in 50-digit arithmetic: the integral variance cancels badly for gamma dt << 1.
    """
    with mpmath.workdps(50):
        dt, gamma, sigma2 = mpmath.mpf(dt), mpmath.mpf(gamma), mpmath.mpf(sigma2)
        if gamma == 0:
            out = (1, dt, [[sigma2 * dt, sigma2 * dt**2 / 2], [sigma2 * dt**2 / 2, sigma2 * dt**3 / 3]])
        else:
            e1, e2 = mpmath.exp(-gamma * dt), mpmath.exp(-2 * gamma * dt)
            v00 = sigma2 * (1 - e2) / (2 * gamma)
            v01 = sigma2 * (1 - e1) ** 2 / (2 * gamma**2)
            v11 = sigma2 / gamma**2 * (dt - 2 * (1 - e1) / gamma + (1 - e2) / (2 * gamma))
            out = (e1, (1 - e1) / gamma, [[v00, v01], [v01, v11]])
        return float(out[0]), float(out[1]), np.array(out[2], dtype=float)


class TestBinTransition:
    @pytest.mark.parametrize("gamma", [0.0, 10.0, 1e3, 5e4])
    def test_matches_closed_form(self, gamma):
        dt, sigma2 = 10e-6, 3.7e3
        phi, q = _bin_transition(dt, gamma, sigma2)
        phi_x, phi_i, q_ref = ou_bin_moments(dt, gamma, sigma2)
        assert phi[0, 0] == pytest.approx(phi_x, rel=1e-12)
        assert phi[1, 0] == pytest.approx(phi_i, rel=1e-12)
        np.testing.assert_allclose(q, q_ref, rtol=1e-7)


class TestExactMoments:
    @pytest.mark.parametrize("duty", [0.0, 0.15, 0.5, 0.9])
    @pytest.mark.parametrize("bin_width", [10e-6, 200e-6])
    def test_pulse_a_reproduces_noise_budget(self, duty, bin_width):
        p = ideal_params(kappa2=5.0, duty=duty, bin_width=bin_width)
        m = correlated_pair_covariance(p)
        budget = stroboscopic_noise_budget(p.strobo)
        assert m.var_a == pytest.approx(budget.total, rel=1e-10)

    def test_css_projection_noise_is_kappa2(self):
        # PN / SN of a pulse equals the coupling it accumulates, kappa2 * tau_b / tau
        p = ideal_params(kappa2=3.0, tau_b=100e-6)
        expected = p.shot_noise(100e-6) * 3.0 * 100e-6 / p.strobo.tau
        assert css_projection_noise(p) == pytest.approx(expected, rel=1e-10)

    def test_perfect_qnd_without_back_action(self):
        # D = 0, no decoherence: B repeats A's atomic value, so the conditional noise
        # approaches shot noise as the coupling of A grows
        p = ideal_params(kappa2=400.0, duty=0.0)
        m = correlated_pair_covariance(p)
        assert m.xi2() < 0.01

    def test_gap_decorrelates(self):
        p = presets.gap_demo(gap=0.0)
        covs = [correlated_pair_covariance(p.with_sequence(gap=g)).covariance
                for g in (0.0, 50e-6, 200e-6, 1e-3)]
        assert all(a > b for a, b in zip(covs, covs[1:]))

    def test_truncation(self):
        p = presets.gap_demo()
        full = correlated_pair_covariance(p)
        two = correlated_pair_covariance(p, 2)
        assert two.var_a == full.var_a
        assert two.var_b < full.var_b
        assert two.sn_b == pytest.approx(full.sn_b / 5)
        with pytest.raises(ValueError):
            correlated_pair_covariance(p, 11)

    def test_gap_survival(self):
        d = DecoherenceModel(t2=2e-3, coil_rate=100.0, dark_time=1e-4)
        g = 50e-6
        assert d.gap_survival(g) == pytest.approx(math.exp(-g * (500 + 100) - 0.25), rel=1e-14)

    def test_sweep_gap_drops_rf(self):
        p = presets.mit(presets.mit_rf_pulse())
        out = sweep_gap(p, [50e-6, 100e-6])
        assert out[0][1] == pytest.approx(
            correlated_pair_covariance(p.with_sequence(rf=None)).xi2_db(), rel=1e-12)


class TestSampling:
    def test_moments_match_prediction(self):
        p = presets.mit(presets.mit_rf_pulse())
        n = 200_000
        b = simulate_batch(p, n, 11)
        m = correlated_pair_covariance(p)
        c = np.cov(b.q_a, b.q_b)
        for est, ref in ((c[0, 0], m.var_a), (c[1, 1], m.var_b)):
            assert abs(est / ref - 1) < 4 * math.sqrt(2 / n)
        corr = m.covariance / math.sqrt(m.var_a * m.var_b)
        assert abs(c[0, 1] / math.sqrt(c[0, 0] * c[1, 1]) - corr) < 4 * (1 - corr**2) / math.sqrt(n)
        assert abs(b.q_b.mean() - m.mean[1]) < 4 * math.sqrt(m.var_b / n)
        assert abs(b.q_a.mean()) < 4 * math.sqrt(m.var_a / n)

    def test_signal_mean_positive(self):
        p = presets.mit(presets.mit_rf_pulse())
        assert correlated_pair_covariance(p).mean[1] > 0
        assert correlated_pair_covariance(p).mean[0] == 0

    def test_independent_of_chunking_and_workers(self):
        p = presets.squeezing_demo()
        idx = np.arange(5000)
        seeds = record_seeds(3, idx)
        ref = simulate_seeds(p, seeds, idx)
        for kwargs in ({"chunk_size": 7}, {"chunk_size": 1000, "n_workers": 3}):
            other = simulate_seeds(p, seeds, idx, **kwargs)
            np.testing.assert_array_equal(other.q_a, ref.q_a)
            np.testing.assert_array_equal(other.q_b_bins, ref.q_b_bins)

    def test_record_depends_only_on_index(self):
        p = presets.squeezing_demo()
        full = simulate_batch(p, 50, 42)
        part = simulate_batch(p, 10, 42, start_index=20)
        np.testing.assert_array_equal(part.q_a, full.q_a[20:30])
        shot = simulate_shot(p, int(full.seed[25]), 25)
        assert shot.q_a == full.q_a[25]
        assert shot.q_b == full.q_b[25]

    def test_seed_changes_records(self):
        p = presets.squeezing_demo()
        assert not np.array_equal(simulate_batch(p, 5, 1).q_a, simulate_batch(p, 5, 2).q_a)

    def test_draw_count(self):
        p = presets.squeezing_demo()
        assert n_draws(p) == 1 + 3 * 22 + 1 + 3 * 4 + 1

    def test_batch_behaves_as_sequence(self):
        b = simulate_batch(presets.squeezing_demo(), 6, 0)
        recs = list(b)
        assert len(recs) == 6
        again = ShotBatch.from_records(recs)
        np.testing.assert_array_equal(again.q_b, b.q_b)
        both = ShotBatch.concat([b[:2], b[2:]])
        np.testing.assert_array_equal(both.q_a, b.q_a)
        assert recs[3].q_b == pytest.approx(sum(recs[3].q_b_bins), rel=1e-15)

    def test_progress_hook(self):
        calls = []
        simulate_seeds(presets.squeezing_demo(), record_seeds(0, np.arange(30)), np.arange(30),
                       chunk_size=10, progress=lambda done, total: calls.append((done, total)))
        assert calls == [(10, 30), (20, 30), (30, 30)]


class TestValidation:
    def test_bin_width_must_divide_pulses(self):
        with pytest.raises(SimulationError):
            SequenceParams(tau_a=225e-6)

    def test_rf_must_fit_gap(self):
        with pytest.raises(SimulationError):
            SequenceParams(gap=10e-6, rf=RfPulseParams(1e-11, duration=47e-6))

    def test_negative_rates(self):
        with pytest.raises(SimulationError):
            DecoherenceModel(probe_rate=-1.0)

    def test_reps(self):
        with pytest.raises(SimulationError):
            simulate_batch(presets.squeezing_demo(), 0, 1)
