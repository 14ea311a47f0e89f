"""Atom-light coupling constants and the quantum noise budget of the probe.

Everything here is a pure function of its inputs. Variances are expressed in
shot-noise units (SNU): ``sn_scale`` is the photon shot-noise variance of an
unmodulated probe carrying the same average photon number.

Two coupling parameterizations are in use and both are supported:

* ``kappa2`` (k-hat squared) enters the budget as ``1 + k^2 + k^4 C / 3``;
* ``kappa_tilde2 = 2 * kappa2`` enters as ``1 + kt^2 / 2 + C kt^4 / 12``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Mapping, NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from .constants import DEFAULT_CONSTANTS

# resonance guard, relative to |detuning|
SINGULAR_EPS = 1e-6


class SingularDetuningError(ValueError):
    """The probe detuning coincides with an excited-state offset."""


class ZeroCouplingError(ValueError):
    pass


def sinc(x):
    """Unnormalized ``sin(x)/x`` with the removable singularity at 0 filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    out = np.where(small, 1.0 - x * x / 6.0, np.sin(safe) / safe)
    return float(out) if out.ndim == 0 else out


def eta(duty_cycle):
    """Overlap of the stroboscopic pulse train with the demodulation, 1 + sinc(pi D)."""
    return 1.0 + sinc(np.pi * np.asarray(duty_cycle, dtype=float))


def back_action_factor(duty_cycle):
    """Fraction ``C(D)`` of back-action noise that leaks into the measured quadrature."""
    s = sinc(np.pi * np.asarray(duty_cycle, dtype=float))
    return (1.0 - s) / (1.0 + s)


@dataclass(frozen=True)
class OpticalParams:
    """Probe beam and the relevant cesium D2 excited-state structure.

    ``detuning_hz`` is measured from the reference transition of the manifold
    in use: F=4 -> F'=5 for the F=4 coefficient, F=3 -> F'=2 for F=3. The
    ``for_f4`` / ``for_f3`` constructors enforce the sign convention used in
    the experiment (blue, i.e. negative, for F=4; positive for F=3).
    """

    detuning_hz: float
    wavelength: float = DEFAULT_CONSTANTS["cs_d2_wavelength_m"]
    linewidth: float = DEFAULT_CONSTANTS["cs_d2_linewidth_rad_s"]
    beam_area: float = 500e-6 * 500e-6
    photon_flux: float = 1e15
    hfs_35: float = DEFAULT_CONSTANTS["excited_hfs_35_hz"]
    hfs_45: float = DEFAULT_CONSTANTS["excited_hfs_45_hz"]
    hfs_23: float = DEFAULT_CONSTANTS["excited_hfs_23_hz"]
    hfs_24: float = DEFAULT_CONSTANTS["excited_hfs_24_hz"]

    def __post_init__(self):
        if self.detuning_hz == 0 or not math.isfinite(self.detuning_hz):
            raise ValueError("detuning must be finite and nonzero")
        for name in ("wavelength", "linewidth", "beam_area"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.photon_flux < 0:
            raise ValueError("photon_flux must be nonnegative")

    @classmethod
    def for_f4(cls, detuning_hz: float = -1.82e9, **kwargs) -> "OpticalParams":
        if detuning_hz >= 0:
            raise ValueError("F=4 detuning is blue of F=4 -> F'=5 and must be negative")
        return cls(detuning_hz=detuning_hz, **kwargs)

    @classmethod
    def for_f3(cls, detuning_hz: float = 6.76e9, **kwargs) -> "OpticalParams":
        if detuning_hz <= 0:
            raise ValueError("F=3 detuning is red of F=3 -> F'=2 and must be positive")
        return cls(detuning_hz=detuning_hz, **kwargs)

    @classmethod
    def from_constants(cls, constants: Mapping[str, float], detuning_hz: float, **kwargs):
        base = dict(
            wavelength=constants["cs_d2_wavelength_m"],
            linewidth=constants["cs_d2_linewidth_rad_s"],
            hfs_35=constants["excited_hfs_35_hz"],
            hfs_45=constants["excited_hfs_45_hz"],
            hfs_23=constants["excited_hfs_23_hz"],
            hfs_24=constants["excited_hfs_24_hz"],
        )
        base.update(kwargs)
        return cls(detuning_hz=detuning_hz, **base)

    def replace(self, **changes) -> "OpticalParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class StroboscopicParams:
    """Duty cycle ``D``, pulse-train duration ``tau`` and the accumulated coupling.

    ``kappa2`` is the coupling accumulated over ``tau``; the simulator scales
    it linearly for pulses of other durations.
    """

    duty_cycle: float
    tau: float
    kappa2: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise ValueError("duty_cycle must lie in [0, 1]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.kappa2 < 0:
            raise ValueError("kappa2 must be nonnegative")

    @property
    def eta(self) -> float:
        return eta(self.duty_cycle)

    @property
    def back_action(self) -> float:
        return back_action_factor(self.duty_cycle)

    @property
    def kappa_tilde2(self) -> float:
        return 2.0 * self.kappa2

    @property
    def kappa_rate(self) -> float:
        """Coupling accumulated per second of probing."""
        return self.kappa2 / self.tau

    def replace(self, **changes) -> "StroboscopicParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class NoiseBudget:
    sn: float
    pn: float
    ban: float
    en: float = 0.0

    def __post_init__(self):
        for name in ("sn", "pn", "ban", "en"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def total(self) -> float:
        return self.sn + self.pn + self.ban + self.en

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


def _check_denominator(value: float, detuning: float):
    if abs(value) < SINGULAR_EPS:
        raise SingularDetuningError(
            f"detuning {detuning:.6g} Hz is on an excited-state resonance"
        )


def vector_polarizability_f4(optical: OpticalParams) -> float:
    """Faraday (rank-1) coefficient ``a1`` for atoms in F=4."""
    d = optical.detuning_hz
    den35 = 1.0 - optical.hfs_35 / d
    den45 = 1.0 - optical.hfs_45 / d
    _check_denominator(den35, d)
    _check_denominator(den45, d)
    return (-35.0 / den35 - 21.0 / den45 + 176.0) / 120.0


def vector_polarizability_f3(optical: OpticalParams) -> float:
    """Faraday (rank-1) coefficient ``a1`` for atoms in F=3."""
    d = optical.detuning_hz
    den24 = 1.0 + optical.hfs_24 / d
    den23 = 1.0 + optical.hfs_23 / d
    _check_denominator(den24, d)
    _check_denominator(den23, d)
    return (45.0 / den24 - 21.0 / den23 - 80.0) / 56.0


def f3_pn_suppression_ratio(f4_optical: OpticalParams, f3_optical: OpticalParams) -> float:
    """How much weaker the F=3 projection-noise contribution is, per atom.

    Projection noise scales as ``(a1 / detuning)**2``; the caller supplies both
    detunings for the same laser frequency.
    """
    a4 = vector_polarizability_f4(f4_optical)
    a3 = vector_polarizability_f3(f3_optical)
    return (a4 / f4_optical.detuning_hz) ** 2 / (a3 / f3_optical.detuning_hz) ** 2


def faraday_beta(optical: OpticalParams, manifold: int = 4) -> float:
    """Polarization rotation per unit spin, ``-Gamma/(8 A Delta) * lambda^2/(2 pi) * a1``.

    The detuning is converted to rad/s so that ``Gamma / Delta`` is dimensionless.
    """
    if manifold == 4:
        a1 = vector_polarizability_f4(optical)
    elif manifold == 3:
        a1 = vector_polarizability_f3(optical)
    else:
        raise ValueError("manifold must be 3 or 4")
    delta = 2 * math.pi * optical.detuning_hz
    return (
        -optical.linewidth
        / (8.0 * optical.beam_area * delta)
        * optical.wavelength**2
        / (2 * math.pi)
        * a1
    )


def kappa_squared(
    optical: OpticalParams, strobo: StroboscopicParams, jx: float, manifold: int = 4
) -> float:
    """Coupling ``k^2 = beta^2 Jx Phi tau (1 + sinc(pi D)) / 4`` for one pulse train."""
    if not jx > 0:
        raise ValueError("jx must be positive")
    beta = faraday_beta(optical, manifold)
    return 0.25 * beta**2 * jx * optical.photon_flux * strobo.tau * strobo.eta


def stroboscopic_noise_budget(
    strobo: StroboscopicParams, sn_scale: float = 1.0, en: float = 0.0
) -> NoiseBudget:
    """Decompose the demodulated cosine-quadrature variance into SN, PN, BAN and EN."""
    if not sn_scale > 0:
        raise ValueError("sn_scale must be positive")
    sn = sn_scale * strobo.eta
    k2 = strobo.kappa2
    return NoiseBudget(
        sn=sn,
        pn=sn * k2,
        ban=sn * k2 * k2 * strobo.back_action / 3.0,
        en=en,
    )


def budget_tilde(strobo: StroboscopicParams, sn_scale: float = 1.0) -> float:
    """Total quantum noise written with ``kappa_tilde``: eta (1 + kt^2/2 + C kt^4/12)."""
    kt2 = strobo.kappa_tilde2
    return sn_scale * strobo.eta * (1 + kt2 / 2 + strobo.back_action * kt2 * kt2 / 12)


def continuous_snr_denominator(kappa):
    """``sqrt(1 + k^2/2 + k^4/12) / k``; inverse SNR of a continuous measurement."""
    k = np.asarray(kappa, dtype=float)
    return np.sqrt(1 + k**2 / 2 + k**4 / 12) / k


class SqlOptimum(NamedTuple):
    kappa_opt: float
    variance_ratio: float
    std_ratio: float


def sql_optimum() -> SqlOptimum:
    k_opt = 12.0**0.25
    ratio = 2 * (1 + k_opt**2 / 2 + k_opt**4 / 12) / k_opt**2
    return SqlOptimum(k_opt, ratio, math.sqrt(ratio))


def minimize_snr_denominator(upper: float = 5.0) -> float:
    """Numerically locate the coupling that maximizes the continuous-probe SNR."""
    res = minimize_scalar(
        continuous_snr_denominator, bounds=(1e-6, upper), method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x)


def sensitivity(strobo: StroboscopicParams, xi2: float = 1.0) -> float:
    """Relative field sensitivity ``sqrt(1 + xi2 kt^2 / 2) / kt`` (back-action free)."""
    if not xi2 > 0:
        raise ValueError("xi2 must be positive")
    kt2 = strobo.kappa_tilde2
    if kt2 == 0:
        raise ZeroCouplingError("sensitivity is undefined without probe coupling")
    return math.sqrt(1 + xi2 * kt2 / 2) / math.sqrt(kt2)


def improvement_ratio(pn_over_sn: float, xi2: float) -> float:
    """Squeezed over unsqueezed single-shot uncertainty, ``sqrt(SN + xi2 PN)/sqrt(SN + PN)``."""
    return math.sqrt(1 + xi2 * pn_over_sn) / math.sqrt(1 + pn_over_sn)
