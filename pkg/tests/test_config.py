"""Tests for the YAML run configuration."""

import math

import pytest
import yaml

from qmit import presets
from qmit.coefficients import OpticalParams, StroboscopicParams, kappa_squared
from qmit.config import PRESETS, ConfigError, RunConfig, preset
from qmit.simulator import correlated_pair_covariance


class TestRoundTrip:
    @pytest.mark.parametrize("name", PRESETS)
    def test_yaml_round_trip(self, tmp_path, name):
        cfg = preset(name)
        back = RunConfig.load(cfg.save(tmp_path / "run.yaml"))
        assert back == cfg
        assert back.sha256 == cfg.sha256

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "e.yaml"
        path.write_text("")
        assert RunConfig.load(path) == RunConfig.default()

    def test_partial_file_merges(self, tmp_path):
        path = tmp_path / "p.yaml"
        path.write_text("seed: 9\nrun:\n  reps: 12\n")
        cfg = RunConfig.load(path)
        assert cfg.data["seed"] == 9
        assert cfg.data["run"]["reps"] == 12
        assert cfg.data["scan"] == RunConfig.default().data["scan"]

    def test_hash_tracks_content(self):
        a = RunConfig.default()
        assert a.replace(seed=2).sha256 != a.sha256
        assert a.replace(seed=1).sha256 == a.sha256


class TestPresets:
    def test_mit_preset_builds_mit_params(self):
        assert preset("mit").simulation_params() == presets.mit(presets.mit_rf_pulse())

    def test_squeezing_preset(self):
        assert preset("squeezing").simulation_params() == presets.squeezing_demo()

    def test_gap_preset(self):
        assert preset("gap").simulation_params() == presets.gap_demo()

    def test_group_field_overrides(self):
        cfg = preset("mit")
        assert cfg.sample().peak_field == presets.MIT_RF_AMPLITUDE
        assert cfg.sample("phase_sweep").peak_field == presets.MIT_RF_AMPLITUDE
        assert cfg.sample("scan").peak_field == presets.SCAN_PEAK_FIELD

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("nope")


class TestDerivedCoupling:
    def test_null_kappa2_uses_optical_group(self):
        cfg = RunConfig.default().replace(**{"stroboscopic.kappa2": None})
        t = cfg.data
        strobo = StroboscopicParams(t["stroboscopic"]["duty_cycle"], t["stroboscopic"]["tau_s"])
        optical = OpticalParams(t["optical"]["detuning_hz"],
                                beam_area=t["optical"]["beam_area_m2"],
                                photon_flux=t["optical"]["photon_flux_per_s"])
        expected = kappa_squared(optical, strobo, cfg.ensemble().jx, 4)
        assert cfg.stroboscopic().kappa2 == pytest.approx(expected, rel=1e-15)
        correlated_pair_covariance(cfg.simulation_params())


class TestValidation:
    @pytest.mark.parametrize("tree, path", [
        ({"bogus": 1}, "bogus"),
        ({"ensemble": {"n_atom": 1}}, "ensemble.n_atom"),
        ({"sequence": {"rf": {"amp": 1}}}, "sequence.rf.amp"),
    ])
    def test_unknown_keys_name_their_path(self, tree, path):
        with pytest.raises(ConfigError, match=path):
            RunConfig.from_dict(tree)

    @pytest.mark.parametrize("tree, where", [
        ({"version": 2}, "version"),
        ({"seed": 1.5}, "seed"),
        ({"run": {"reps": 0}}, "run.reps"),
        ({"ensemble": {"n_atoms": "many"}}, "ensemble.n_atoms"),
        ({"ensemble": {"polarization": 1.5}}, "ensemble"),
        ({"sequence": {"tau_a_s": 225e-6}}, "sequence"),
        ({"analysis": {"pn_reference": "other"}}, "analysis.pn_reference"),
        ({"analysis": {"n_bins_b": 5}}, "analysis.n_bins_b"),
        ({"emit": {"csv": "yes"}}, "emit.csv"),
        ({"phase_sweep": {"phases_deg": []}}, "phase_sweep.phases_deg"),
        ({"gap_sweep": {"gaps_s": [0.0, "x"]}}, r"gap_sweep.gaps_s\[1\]"),
        ({"scan": {"step_m": 0.0}}, "scan.step_m"),
        ({"ensemble": {"t1_s": True}}, "ensemble.t1_s"),
        ("text", "config"),
    ])
    def test_bad_values(self, tree, where):
        with pytest.raises(ConfigError, match=where):
            RunConfig.from_dict(tree)

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("a: [1, 2\n")
        with pytest.raises(ConfigError):
            RunConfig.load(path)

    def test_replace_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.default().replace(**{"run.parallel": 4})

    def test_yaml_is_plain(self):
        data = yaml.safe_load(preset("mit").to_yaml())
        assert data["sequence"]["rf"]["amplitude_t"] == presets.MIT_RF_AMPLITUDE
        assert math.isclose(data["sample"]["phase_offset_rad"], math.pi / 2)
