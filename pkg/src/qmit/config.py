"""Run configuration: a YAML key tree with SI units in the key names.

Every group is validated by building the corresponding model object, so a
bad value fails before any computation with the offending key path in the
message. Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import presets
from .coefficients import OpticalParams, StroboscopicParams, kappa_squared
from .simulator import DecoherenceModel, SequenceParams, SimulationParams, SimulationError
from .spin_dynamics import EnsembleParams, RfPulseParams
from .tomography import SampleResponse

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _default_tree() -> dict:
    return {
        "version": CONFIG_VERSION,
        "seed": 1,
        "out_dir": "out",
        "ensemble": {
            "n_atoms": presets.N_ATOMS,
            "spin": 4,
            "t1_s": presets.T1,
            "t2_s": presets.T2,
            "polarization": presets.POLARIZATION,
            "larmor_hz": presets.LARMOR / (2 * math.pi),
        },
        "optical": {
            "detuning_hz": -1.82e9,
            "beam_area_m2": 2.5e-7,
            "photon_flux_per_s": 1e15,
            "manifold": 4,
        },
        "stroboscopic": {
            "duty_cycle": presets.DUTY_CYCLE,
            "tau_s": presets.TAU_A,
            # null derives the coupling from the optical group
            "kappa2": presets.DEMO_KAPPA2,
            "electronic_noise_snu": presets.ELECTRONIC_NOISE,
        },
        "sequence": {
            "tau_a_s": presets.TAU_A,
            "gap_s": 0.0,
            "tau_b_s": 40e-6,
            "bin_width_s": 10e-6,
            "demod_phase_rad": 0.0,
            "rf": None,
        },
        "decoherence": {
            "probe_rate_per_s": presets.DEMO_PROBE_RATE,
            "coil_rate_per_s": 0.0,
            "dark_time_s": presets.DARK_TIME,
            "classical_noise_css": 0.0,
        },
        "sample": {
            "center_m": 0.0,
            "width_m": presets.SCAN_SIGMA,
            "peak_field_t": 0.0,
            "phase_offset_rad": math.pi / 2,
        },
        "analysis": {
            "n_blocks": 9,
            "n_bins_b": None,
            "pn_reference": "measured",
        },
        "run": {"reps": 4000},
        "scan": {
            "n_positions": presets.SCAN_POSITIONS,
            "step_m": presets.SCAN_STEP,
            "reps_per_position": presets.SCAN_REPS,
            "n_scans": 100,
            "per_rep_time_s": 13e-3,
            "background_reps": 16000,
            "rf_phase_rad": math.pi / 2,
            # null uses sample.peak_field_t
            "peak_field_t": None,
        },
        "phase_sweep": {
            "phases_deg": [0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0],
            "reps": 16000,
            "background_reps": 16000,
            "peak_field_t": None,
        },
        "gap_sweep": {
            "gaps_s": [0.0, 25e-6, 50e-6, 100e-6, 150e-6, 200e-6, 300e-6],
            "reps": 36000,
        },
        "budget": {
            "duty_cycles": [0.0, 0.15, 0.5, 0.9, 1.0],
            "sn_scale": 1.0,
        },
        "emit": {"csv": True, "json": True},
    }


_RF_KEYS = {"amplitude_t": 0.0, "phase_rad": 0.0, "duration_s": 47e-6,
            "frequency_hz": presets.LARMOR / (2 * math.pi), "phase_clean": True}
_CHOICES = {("analysis", "pn_reference"): ("measured", "css")}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}: unknown key")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key == "rf":
            if value is None:
                out[key] = None
            else:
                out[key] = _merge(_RF_KEYS, value, where)
        elif isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _num(tree, path, *, integer=False, allow_none=False):
    node = tree
    for part in path.split("."):
        node = node[part]
    if node is None and allow_none:
        return None
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {node!r}")
    if integer:
        if float(node) != int(node):
            raise ConfigError(f"{path}: expected an integer, got {node!r}")
        return int(node)
    return float(node)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration tree; ``data`` is the full merged tree."""

    data: dict

    @classmethod
    def from_dict(cls, given: dict) -> "RunConfig":
        tree = _merge(_default_tree(), given or {}, "")
        if tree["version"] != CONFIG_VERSION:
            raise ConfigError(f"version: unsupported config version {tree['version']!r}")
        cfg = cls(tree)
        cfg.validate()
        return cfg

    @classmethod
    def default(cls) -> "RunConfig":
        return cls.from_dict({})

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
        return cls.from_dict(data or {})

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=None)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_yaml())
        return path

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        """Return a copy with dotted-path overrides, e.g. ``replace(**{"run.reps": 10})``."""
        tree = self.to_dict()
        for dotted, value in changes.items():
            node = tree
            parts = dotted.split(".")
            for part in parts[:-1]:
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"{dotted}: unknown key")
            node[parts[-1]] = value
        return RunConfig.from_dict(tree)

    # -- builders ---------------------------------------------------------

    def ensemble(self) -> EnsembleParams:
        t = self.data
        return EnsembleParams(
            n_atoms=_num(t, "ensemble.n_atoms"),
            spin=_num(t, "ensemble.spin", integer=True),
            t1=_num(t, "ensemble.t1_s"),
            t2=_num(t, "ensemble.t2_s"),
            polarization=_num(t, "ensemble.polarization"),
            larmor=2 * math.pi * _num(t, "ensemble.larmor_hz"),
        )

    def optical(self) -> OpticalParams:
        t = self.data
        return OpticalParams(
            detuning_hz=_num(t, "optical.detuning_hz"),
            beam_area=_num(t, "optical.beam_area_m2"),
            photon_flux=_num(t, "optical.photon_flux_per_s"),
        )

    def stroboscopic(self) -> StroboscopicParams:
        t = self.data
        strobo = StroboscopicParams(_num(t, "stroboscopic.duty_cycle"),
                                    _num(t, "stroboscopic.tau_s"))
        kappa2 = _num(t, "stroboscopic.kappa2", allow_none=True)
        if kappa2 is None:
            manifold = _num(t, "optical.manifold", integer=True)
            kappa2 = kappa_squared(self.optical(), strobo, self.ensemble().jx, manifold)
        return strobo.replace(kappa2=kappa2)

    def rf(self) -> RfPulseParams | None:
        rf = self.data["sequence"]["rf"]
        if rf is None:
            return None
        t = self.data
        freq = 2 * math.pi * _num(t, "sequence.rf.frequency_hz")
        amp = _num(t, "sequence.rf.amplitude_t")
        phase = _num(t, "sequence.rf.phase_rad")
        if rf["phase_clean"]:
            return RfPulseParams.phase_clean_pulse(amp, phase, _num(t, "sequence.rf.duration_s"), freq)
        return RfPulseParams(amp, phase, _num(t, "sequence.rf.duration_s"), freq)

    def sequence(self) -> SequenceParams:
        t = self.data
        return SequenceParams(
            tau_a=_num(t, "sequence.tau_a_s"),
            gap=_num(t, "sequence.gap_s"),
            tau_b=_num(t, "sequence.tau_b_s"),
            rf=self.rf(),
            demod_phase=_num(t, "sequence.demod_phase_rad"),
            bin_width=_num(t, "sequence.bin_width_s"),
        )

    def decoherence(self) -> DecoherenceModel:
        t = self.data
        dark = _num(t, "decoherence.dark_time_s", allow_none=True)
        return DecoherenceModel(
            t2=_num(t, "ensemble.t2_s"),
            t1=_num(t, "ensemble.t1_s"),
            probe_rate=_num(t, "decoherence.probe_rate_per_s"),
            coil_rate=_num(t, "decoherence.coil_rate_per_s"),
            dark_time=math.inf if dark is None else dark,
            classical_noise=_num(t, "decoherence.classical_noise_css"),
        )

    def simulation_params(self) -> SimulationParams:
        return SimulationParams(self.ensemble(), self.stroboscopic(), self.sequence(),
                                self.decoherence(),
                                _num(self.data, "stroboscopic.electronic_noise_snu"))

    def sample(self, group: str | None = None) -> SampleResponse:
        """Sample response; ``group`` ("scan" or "phase_sweep") applies its field override."""
        t = self.data
        peak = _num(t, "sample.peak_field_t")
        if group is not None:
            override = _num(t, f"{group}.peak_field_t", allow_none=True)
            peak = peak if override is None else override
        return SampleResponse(
            center=_num(t, "sample.center_m"),
            width=_num(t, "sample.width_m"),
            peak_field=peak,
            phase_offset=_num(t, "sample.phase_offset_rad"),
        )

    def validate(self):
        t = self.data
        for (group, key), choices in _CHOICES.items():
            if t[group][key] not in choices:
                raise ConfigError(f"{group}.{key}: expected one of {choices}, got {t[group][key]!r}")
        if not isinstance(t["out_dir"], str):
            raise ConfigError("out_dir: expected a string")
        _num(t, "seed", integer=True)
        for key in ("csv", "json"):
            if not isinstance(t["emit"][key], bool):
                raise ConfigError(f"emit.{key}: expected true or false")
        if t["sequence"]["rf"] is not None and not isinstance(t["sequence"]["rf"]["phase_clean"], bool):
            raise ConfigError("sequence.rf.phase_clean: expected true or false")
        for path in ("analysis.n_blocks", "run.reps", "scan.n_positions",
                     "scan.reps_per_position", "scan.n_scans", "scan.background_reps",
                     "phase_sweep.reps", "phase_sweep.background_reps", "gap_sweep.reps"):
            if _num(t, path, integer=True) < 1:
                raise ConfigError(f"{path}: must be >= 1")
        nb = _num(t, "analysis.n_bins_b", integer=True, allow_none=True)
        for path in ("scan.step_m", "scan.per_rep_time_s", "budget.sn_scale"):
            if not _num(t, path) > 0:
                raise ConfigError(f"{path}: must be positive")
        for group, key in (("phase_sweep", "phases_deg"), ("gap_sweep", "gaps_s"),
                           ("budget", "duty_cycles")):
            values = t[group][key]
            if not isinstance(values, list) or not values:
                raise ConfigError(f"{group}.{key}: expected a nonempty list")
            for i, v in enumerate(values):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{group}.{key}[{i}]: expected a number, got {v!r}")
        builders = [("ensemble", self.ensemble), ("optical", self.optical),
                    ("stroboscopic", self.stroboscopic), ("sequence", self.sequence),
                    ("decoherence", self.decoherence), ("sample", self.sample),
                    ("scan", lambda: self.sample("scan")),
                    ("phase_sweep", lambda: self.sample("phase_sweep")),
                    ("simulation", self.simulation_params)]
        for name, build in builders:
            try:
                build()
            except ConfigError:
                raise
            except (ValueError, SimulationError) as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        if nb is not None and not 1 <= nb <= self.sequence().n_bins_b:
            raise ConfigError(f"analysis.n_bins_b: must lie in [1, {self.sequence().n_bins_b}]")


def preset(name: str) -> RunConfig:
    """Configuration trees for the calibrated operating points."""
    base = RunConfig.default().to_dict()
    if name == "squeezing":
        pass
    elif name == "gap":
        base["sequence"].update(tau_b_s=presets.GAP_TAU_B, gap_s=presets.GAP_REFERENCE)
        base["analysis"]["n_bins_b"] = None
    elif name == "mit":
        base["stroboscopic"]["kappa2"] = presets.MIT_KAPPA2
        base["sequence"].update(tau_b_s=presets.MIT_TAU_B, gap_s=presets.MIT_GAP,
                                rf=dict(_RF_KEYS, amplitude_t=presets.MIT_RF_AMPLITUDE))
        base["decoherence"].update(probe_rate_per_s=presets.mit_probe_rate(),
                                   coil_rate_per_s=presets.MIT_COIL_RATE,
                                   classical_noise_css=presets.MIT_CLASSICAL_NOISE)
        base["sample"]["peak_field_t"] = presets.MIT_RF_AMPLITUDE
        base["scan"]["peak_field_t"] = presets.SCAN_PEAK_FIELD
        base["analysis"]["pn_reference"] = "css"
        base["run"]["reps"] = 16000
    else:
        raise ConfigError(f"unknown preset {name!r}; choose squeezing, gap or mit")
    return RunConfig.from_dict(base)


PRESETS = ("squeezing", "gap", "mit")
