"""Mean spin response, spin-noise references and sublevel population models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .constants import DEFAULT_CONSTANTS


@dataclass(frozen=True)
class EnsembleParams:
    """Atomic ensemble of the sensor.

    ``larmor`` and ``gyromagnetic`` are angular quantities (rad/s, rad/(s T)).
    """

    n_atoms: float
    spin: int = 4
    t1: float = 4.5e-3
    t2: float = 2.35e-3
    polarization: float = 1.0
    larmor: float = 2 * math.pi * 725e3
    gyromagnetic: float = DEFAULT_CONSTANTS["cs_f4_gyromagnetic_rad_s_t"]

    def __post_init__(self):
        if self.n_atoms < 0:
            raise ValueError("n_atoms must be nonnegative")
        if self.spin < 1:
            raise ValueError("spin must be >= 1")
        if not 0.0 <= self.polarization <= 1.0:
            raise ValueError("polarization must lie in [0, 1]")
        if not self.t2 > 0:
            raise ValueError("t2 must be positive")
        if self.t1 < self.t2 / 2:
            raise ValueError("t1 must be at least t2 / 2")
        if not self.larmor > 0:
            raise ValueError("larmor must be positive")

    @property
    def jx(self) -> float:
        """Macroscopic spin along the bias field, F N_A p."""
        return self.spin * self.n_atoms * self.polarization

    def replace(self, **changes) -> "EnsembleParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class RfPulseParams:
    """RF (eddy-current) field seen by the atoms during the gap.

    ``phase`` is measured relative to the lock-in reference; ``frequency`` is
    angular. With ``phase_clean`` set, the duration must hold an integer
    number of Larmor periods.
    """

    amplitude: float
    phase: float = 0.0
    duration: float = 47e-6
    frequency: float = 2 * math.pi * 725e3
    phase_clean: bool = False

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("RF duration must be positive")
        if self.phase_clean:
            periods = self.duration * self.frequency / (2 * math.pi)
            if abs(periods - round(periods)) > 1e-6 * max(periods, 1.0):
                raise ValueError(
                    f"phase-clean pulse must span an integer number of periods, got {periods:.4f}"
                )

    @classmethod
    def phase_clean_pulse(cls, amplitude, phase=0.0, approx_duration=47e-6,
                          frequency=2 * math.pi * 725e3):
        period = 2 * math.pi / frequency
        n = max(1, round(approx_duration / period))
        return cls(amplitude, phase, n * period, frequency, phase_clean=True)

    def replace(self, **changes) -> "RfPulseParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class PopulationDistribution:
    """Zeeman sublevel populations ``p_m`` for m = -F..F (index 0 is m = -F)."""

    populations: tuple
    manifold: int = 4
    spin: int = field(init=False)

    def __post_init__(self):
        p = np.asarray(self.populations, dtype=float)
        if p.ndim != 1 or p.size % 2 != 1:
            raise ValueError("populations must have 2F+1 entries")
        if np.any(p < -1e-15):
            raise ValueError("populations must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"populations must sum to 1, got {p.sum()}")
        object.__setattr__(self, "populations", tuple(float(v) for v in p))
        object.__setattr__(self, "spin", (p.size - 1) // 2)

    @property
    def m(self) -> np.ndarray:
        return np.arange(-self.spin, self.spin + 1)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.populations)

    @property
    def polarization(self) -> float:
        return float(np.dot(self.m, self.p) / self.spin)

    def moment(self, k: int) -> float:
        return float(np.dot(self.m.astype(float) ** k, self.p))

    def to_dict(self) -> dict:
        return {"manifold": self.manifold, "populations": list(self.populations)}

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationDistribution":
        return cls(tuple(d["populations"]), manifold=int(d.get("manifold", 4)))

    @classmethod
    def stretched(cls, spin: int = 4) -> "PopulationDistribution":
        p = np.zeros(2 * spin + 1)
        p[-1] = 1.0
        return cls(tuple(p), manifold=spin)

    @classmethod
    def uniform(cls, spin: int = 4) -> "PopulationDistribution":
        n = 2 * spin + 1
        return cls(tuple(np.full(n, 1.0 / n)), manifold=spin)


def _spin_temperature_pops(eps: float, spin: int) -> np.ndarray:
    m = np.arange(-spin, spin + 1)
    w = eps ** (spin - m).astype(float)
    return w / w.sum()


def spin_temperature(polarization: float, spin: int = 4) -> PopulationDistribution:
    """Spin-temperature populations ``p_m ~ eps**(F - m)`` with mean <m>/F = polarization."""
    if not 0.0 <= polarization <= 1.0:
        raise ValueError("polarization must lie in [0, 1]")
    if polarization == 1.0:
        eps = 0.0
    elif polarization == 0.0:
        eps = 1.0
    else:
        m = np.arange(-spin, spin + 1)

        def mismatch(e):
            return np.dot(m, _spin_temperature_pops(e, spin)) / spin - polarization

        eps = brentq(mismatch, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
    return PopulationDistribution(tuple(_spin_temperature_pops(eps, spin)), manifold=spin)


def polarization_correction(polarization: float, spin: int = 4) -> float:
    """Excess transverse spin noise of a partially polarized ensemble.

    The state is taken as a spin-temperature mixture; its transverse variance
    ``(F(F+1) - <m^2>) / 2`` is compared with the coherent-state value
    ``<m> / 2`` for the same mean spin length. Equals 1 at full polarization.
    """
    if not 0.0 < polarization <= 1.0:
        raise ValueError("polarization must lie in (0, 1]")
    pop = spin_temperature(polarization, spin)
    return (spin * (spin + 1) - pop.moment(2)) / pop.moment(1)


def transverse_response(ens: EnsembleParams, rf: RfPulseParams) -> float:
    """Mean transverse spin after a resonant RF pulse, in spin units.

    ``gamma/2 * B * Jx * T2 * (1 - exp(-tau/T2))``; the factor 1/2 is the
    co-rotating half of the linearly polarized drive.
    """
    return (
        0.5 * ens.gyromagnetic * rf.amplitude * ens.jx * ens.t2
        * -math.expm1(-rf.duration / ens.t2)
    )


def css_variance(ens: EnsembleParams) -> float:
    """Projection noise ``F/2 N_A`` of the coherent spin state, scaled for p < 1."""
    base = ens.spin / 2 * ens.n_atoms
    if ens.polarization == 1.0 or ens.n_atoms == 0:
        return base
    return base * polarization_correction(ens.polarization, ens.spin)


def f_manifold_fraction(spin: int = 4, nuclear_spin: float = DEFAULT_CONSTANTS["cs_nuclear_spin"]):
    """Share of thermal atoms in hyperfine level F (9/16 for cesium F=4)."""
    return (2 * spin + 1) / (2 * (2 * nuclear_spin + 1))


def tss_variance(ens: EnsembleParams) -> float:
    """Spin noise of the thermal state seen by the probe: F(F+1)/3 per F-atom."""
    return ens.spin * (ens.spin + 1) / 3 * f_manifold_fraction(ens.spin) * ens.n_atoms


def longitudinal_decay(amplitude, t, t1: float):
    """``B exp(-t / T1)``."""
    if not t1 > 0:
        raise ValueError("t1 must be positive")
    return amplitude * np.exp(-np.asarray(t, dtype=float) / t1)


@dataclass(frozen=True)
class MorsComponent:
    m: int  # lower level of the m <-> m+1 transition
    frequency: float
    amplitude: float


def mors_components(pop: PopulationDistribution, larmor_freq: float, quad_split: float):
    """Resonances of the 2F neighbouring-level transitions.

    Transition ``m <-> m+1`` sits at ``larmor_freq + m * quad_split`` (Hz) with
    strength ``(p_{m+1} - p_m) * (F(F+1) - m(m+1))``.
    """
    spin = pop.spin
    p = pop.p
    out = []
    for i, m in enumerate(range(-spin, spin)):
        amp = (p[i + 1] - p[i]) * (spin * (spin + 1) - m * (m + 1))
        out.append(MorsComponent(m, larmor_freq + m * quad_split, float(amp)))
    return out


def mors_spectrum(
    pop: PopulationDistribution,
    larmor_freq: float,
    quad_split: float,
    linewidth: float,
    freqs=None,
):
    """Pulsed-MORS magnitude spectrum.

    Each component is a complex Lorentzian ``A / (1 - 2i (f - f_m) / linewidth)``
    (``linewidth`` is the FWHM in Hz); the spectrum is the magnitude of their
    sum. Returns ``(components, freqs, magnitude)``.
    """
    if not linewidth > 0:
        raise ValueError("linewidth must be positive")
    comps = mors_components(pop, larmor_freq, quad_split)
    if freqs is None:
        span = (pop.spin + 1) * abs(quad_split) + 5 * linewidth
        freqs = np.linspace(larmor_freq - span, larmor_freq + span, 801)
    freqs = np.asarray(freqs, dtype=float)
    amps = np.array([c.amplitude for c in comps])
    centers = np.array([c.frequency for c in comps])
    lor = 1.0 / (1.0 - 2j * (freqs[:, None] - centers[None, :]) / linewidth)
    return comps, freqs, np.abs(lor @ amps)
