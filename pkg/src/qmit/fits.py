"""Curve fits used in the analysis: decay, noise versus power, spatial profile, MORS.

Nonlinear models are solved with :func:`scipy.optimize.least_squares`
(Levenberg-Marquardt with forward-difference Jacobians unless bounds are
needed). Parameter covariances are ``(J^T W J)^-1``; without explicit
uncertainties they are scaled by the reduced chi-square.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .spin_dynamics import PopulationDistribution, _spin_temperature_pops, mors_spectrum


class FitError(RuntimeError):
    """A fit failed to converge or its input is degenerate."""

    def __init__(self, message, residual_norm: float | None = None):
        super().__init__(message)
        self.residual_norm = residual_norm


class UnresolvedSpectrumWarning(UserWarning):
    """MORS components overlap; the polarization estimate is unreliable."""


@dataclass(frozen=True)
class FitResult:
    model: str
    names: tuple
    params: np.ndarray
    cov: np.ndarray
    residual_norm: float
    n_points: int
    nfev: int = 0
    flags: tuple = field(default=())

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.stderr[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {n: float(v) for n, v in zip(self.names, self.params)},
            "stderr": {n: float(v) for n, v in zip(self.names, self.stderr)},
            "cov": np.asarray(self.cov).tolist(),
            "residual_norm": self.residual_norm,
            "n_points": self.n_points,
            "flags": list(self.flags),
        }


def _covariance(jac: np.ndarray, resid: np.ndarray, weighted: bool) -> np.ndarray:
    jac = np.atleast_2d(jac)
    n, k = jac.shape
    cov = np.linalg.pinv(jac.T @ jac)
    if not weighted:
        dof = n - k
        cov = cov * (float(resid @ resid) / dof if dof > 0 else 0.0)
    return 0.5 * (cov + cov.T)


def _arrays(x, y, sigma):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if sigma is not None:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
    return x, y, sigma


def _run(model, names, fun, p0, n_points, weighted, *, bounds=None, max_nfev=2000, **kw):
    method = "lm" if bounds is None and n_points >= len(p0) else "trf"
    opts = dict(method=method, max_nfev=max_nfev, xtol=1e-15, ftol=1e-15, gtol=1e-15, **kw)
    if bounds is not None:
        opts["bounds"] = bounds
    res = least_squares(fun, p0, **opts)
    norm = float(np.linalg.norm(res.fun))
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError(f"{model} fit did not converge ({res.message})", norm)
    cov = _covariance(res.jac, res.fun, weighted)
    return FitResult(model, tuple(names), np.asarray(res.x, dtype=float), cov, norm,
                     n_points, int(res.nfev)), res


# ---------------------------------------------------------------------------
# exponential decay


def exponential_through_two_points(t1, a1, t2, a2) -> tuple[float, float]:
    """``(B, T)`` of ``B exp(-t/T)`` passing through two points."""
    if t1 == t2:
        raise FitError("two-point solution needs distinct times")
    if a1 <= 0 or a2 <= 0:
        raise FitError("two-point solution needs positive amplitudes")
    rate = math.log(a1 / a2) / (t2 - t1)
    if rate == 0:
        raise FitError("amplitudes are equal; no finite decay time")
    return a1 * math.exp(rate * t1), 1.0 / rate


def fit_exponential_decay(t, amplitude, sigma=None, max_nfev: int = 2000) -> FitResult:
    """Fit ``B exp(-t/T1)``; returns parameters ``(B, T1)``.

    The starting point is the two-point solution through the first and last
    samples. Two exact points reproduce that solution.
    """
    t, a, sigma = _arrays(t, amplitude, sigma)
    if t.size < 2 or np.ptp(t) == 0:
        raise FitError("need at least two points spanning a nonzero time range")
    order = np.argsort(t)
    i0, i1 = order[0], order[-1]
    try:
        p0 = exponential_through_two_points(t[i0], a[i0], t[i1], a[i1])
    except FitError:
        p0 = (float(np.max(np.abs(a))) or 1.0, float(np.ptp(t)))
    w = 1.0 if sigma is None else 1.0 / sigma

    def resid(p):
        return (p[0] * np.exp(-t / p[1]) - a) * w

    fit, _ = _run("exponential_decay", ("B", "T1"), resid, np.asarray(p0), t.size,
                  sigma is not None, max_nfev=max_nfev, x_scale=np.abs(p0))
    return fit


# ---------------------------------------------------------------------------
# quadratic noise versus probe power


def fit_noise_vs_power(kappa2, variance, eta: float = 1.0, sigma=None) -> FitResult:
    """Second-order polynomial through ``variance / eta`` against ``kappa2``.

    Returns ``(offset, linear, quadratic)``: the linear term estimates the
    projection-noise slope, the quadratic the back-action noise. ``sigma``
    (same units as ``variance``) makes the fit weighted with absolute errors.
    """
    x, y, sigma = _arrays(kappa2, variance, sigma)
    if not eta > 0:
        raise ValueError("eta must be positive")
    if np.unique(x).size < 3:
        raise FitError("quadratic fit needs at least three distinct abscissae")
    y = y / eta
    w = np.ones_like(x) if sigma is None else eta / sigma
    design = np.column_stack([np.ones_like(x), x, x * x])
    coef, *_ = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)
    resid = (design @ coef - y) * w
    cov = _covariance(design * w[:, None], resid, sigma is not None)
    return FitResult("noise_vs_power", ("offset", "linear", "quadratic"), coef, cov,
                     float(np.linalg.norm(resid)), x.size)


# ---------------------------------------------------------------------------
# Gaussian spatial profile


def gaussian(x, center, width, amplitude, offset):
    return amplitude * np.exp(-0.5 * ((np.asarray(x) - center) / width) ** 2) + offset


def _gaussian_guess(x, y):
    n = x.size
    edge = max(1, n // 10)
    offset = float(np.median(np.concatenate([y[:edge], y[-edge:]]))) if n >= 4 else float(min(y[0], y[-1]))
    dev = y - offset
    k = int(np.argmax(np.abs(dev)))
    amp = float(dev[k])
    above = x[np.abs(dev) >= 0.5 * abs(amp)]
    fwhm = float(np.ptp(above)) if above.size > 1 else float(np.min(np.diff(np.sort(x))))
    width = max(fwhm, float(np.min(np.diff(np.sort(x))))) / (2 * math.sqrt(2 * math.log(2)))
    return np.array([float(x[k]), width, amp, offset])


def fit_gaussian_profile(positions, signal, sigma=None, p0=None) -> FitResult:
    """Fit ``A exp(-(x - x0)^2 / (2 w^2)) + c``; returns ``(center, width, amplitude, offset)``.

    A width not larger than the grid step is flagged ``"degenerate_width"``.
    """
    x, y, sigma = _arrays(positions, signal, sigma)
    if x.size < 3:
        raise FitError("Gaussian fit needs at least three points")
    order = np.argsort(x)
    x, y = x[order], y[order]
    if sigma is not None:
        sigma = sigma[order]
    if np.ptp(y) == 0:
        raise FitError("signal is constant; the profile has no peak")
    start = _gaussian_guess(x, y) if p0 is None else np.asarray(p0, dtype=float)
    w = 1.0 if sigma is None else 1.0 / sigma

    def resid(p):
        return (gaussian(x, *p) - y) * w

    scale = np.array([start[1], start[1], abs(start[2]) or 1.0, abs(start[2]) or 1.0])
    fit, _ = _run("gaussian_profile", ("center", "width", "amplitude", "offset"), resid,
                  start, x.size, sigma is not None, x_scale=scale)
    params = fit.params.copy()
    params[1] = abs(params[1])
    step = float(np.min(np.diff(x)))
    flags = ("degenerate_width",) if params[1] <= step else ()
    return FitResult(fit.model, fit.names, params, fit.cov, fit.residual_norm, fit.n_points,
                     fit.nfev, flags)


# ---------------------------------------------------------------------------
# sinusoid (signal versus RF phase)


def fit_sinusoid(phase, signal) -> FitResult:
    """Linear fit of ``a cos(phi) + b sin(phi) + c``.

    Returns parameters ``(amplitude, phase_max, offset)`` with ``phase_max``
    the phase of the maximum in (-pi, pi]; the coefficient of determination
    is available as ``flags`` entry ``("r2", value)``.
    """
    phi, y, _ = _arrays(phase, signal, None)
    if np.unique(np.mod(phi, 2 * math.pi)).size < 3:
        raise FitError("sinusoid fit needs at least three distinct phases")
    design = np.column_stack([np.cos(phi), np.sin(phi), np.ones_like(phi)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = design @ coef - y
    a, b, c = coef
    amp = math.hypot(a, b)
    cov_lin = _covariance(design, resid, False)
    # Jacobian of (amp, phase, offset) with respect to (a, b, c)
    jac = np.array([
        [a / amp, b / amp, 0.0],
        [-b / amp**2, a / amp**2, 0.0],
        [0.0, 0.0, 1.0],
    ]) if amp > 0 else np.eye(3)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return FitResult("sinusoid", ("amplitude", "phase_max", "offset"),
                     np.array([amp, math.atan2(b, a), c]), jac @ cov_lin @ jac.T,
                     float(np.linalg.norm(resid)), phi.size, flags=(("r2", r2),))


def r_squared(fit: FitResult) -> float:
    for flag in fit.flags:
        if isinstance(flag, tuple) and flag[0] == "r2":
            return float(flag[1])
    raise KeyError("fit carries no r2 value")


# ---------------------------------------------------------------------------
# MORS polarization


def _polarization_of_eps(eps: float, spin: int) -> float:
    return float(np.dot(np.arange(-spin, spin + 1), _spin_temperature_pops(eps, spin)) / spin)


def fit_mors_polarization(freqs, magnitude, larmor_freq: float, quad_split: float,
                          spin: int = 4, linewidth_guess: float | None = None,
                          sigma=None) -> FitResult:
    """Fit a spin-temperature MORS model; returns ``(polarization, linewidth, scale)``.

    The free parameters are the spin-temperature ratio ``eps`` (mapped to the
    polarization), the line FWHM and an overall scale. If the fitted
    linewidth is not below ``quad_split`` an :class:`UnresolvedSpectrumWarning`
    is issued and the result is flagged ``"unresolved"``.
    """
    f, y, sigma = _arrays(freqs, magnitude, sigma)
    if f.size < 4:
        raise FitError("MORS fit needs at least four samples")
    if not quad_split > 0:
        raise ValueError("quad_split must be positive")
    lw0 = linewidth_guess if linewidth_guess is not None else quad_split / 3
    w = 1.0 if sigma is None else 1.0 / sigma

    def model(eps, lw):
        pop = PopulationDistribution(tuple(_spin_temperature_pops(eps, spin)), manifold=spin)
        return mors_spectrum(pop, larmor_freq, quad_split, lw, f)[2]

    peak = float(np.max(model(0.05, lw0)))
    scale0 = float(np.max(y)) / peak if peak > 0 else 1.0

    def resid(p):
        return (p[2] * model(p[0], p[1]) - y) * w

    start = np.array([0.05, lw0, scale0])
    bounds = ([0.0, 1e-9 * quad_split, 0.0], [0.999, np.inf, np.inf])
    fit, res = _run("mors_polarization", ("eps", "linewidth", "scale"), resid, start, f.size,
                    sigma is not None, bounds=bounds, x_scale=[0.01, lw0, scale0])
    eps, lw, scale = fit.params
    # the stretched state sits on the eps = 0 boundary
    at_zero = resid(np.array([0.0, lw, scale]))
    if float(at_zero @ at_zero) <= float(res.fun @ res.fun):
        eps = 0.0
    h = 1e-7
    dp = (_polarization_of_eps(min(eps + h, 0.999), spin)
          - _polarization_of_eps(max(eps - h, 0.0), spin)) / (min(eps + h, 0.999) - max(eps - h, 0.0))
    jac = np.diag([dp, 1.0, 1.0])
    flags = ()
    if lw >= quad_split:
        warnings.warn(
            f"MORS linewidth {lw:.4g} Hz is not below the quadratic splitting "
            f"{quad_split:.4g} Hz; the polarization estimate is unreliable",
            UnresolvedSpectrumWarning, stacklevel=2,
        )
        flags = ("unresolved",)
    return FitResult("mors_polarization", ("polarization", "linewidth", "scale"),
                     np.array([_polarization_of_eps(eps, spin), lw, scale]),
                     jac @ fit.cov @ jac.T, fit.residual_norm, f.size, fit.nfev, flags)
