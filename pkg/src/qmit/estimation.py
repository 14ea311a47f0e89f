"""Conditional variance, squeezing and noise calibration from shot batches.

Variances and covariances use the unbiased (N - 1) normalization. The
variance of Q_A entering the optimal gain is the raw sample variance, shot
and electronic noise included.

Uncertainties follow a block procedure: the shots are split into
``n_blocks`` equal consecutive blocks, the second moments (Var Q_A, Var Q_B,
Cov) are computed per block, and the covariance of their block means is
pushed through each derived quantity to first order (delta method). Point
estimates always use the whole batch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .spin_dynamics import f_manifold_fraction, polarization_correction

DB = 10.0 / math.log(10.0)


class DegenerateInputError(ValueError):
    """Var(Q_A) vanishes, so no conditioning is possible."""


class NonpositivePNError(ValueError):
    """The projection-noise denominator is not positive (noise miscalibrated)."""


def shot_arrays(shots, n_bins: int | None = None):
    """Return ``(q_a, q_b)`` arrays from a batch, a record list or an array pair.

    ``n_bins`` truncates the verification pulse to its first bins; it needs
    binned records.
    """
    if hasattr(shots, "q_b_truncated"):
        return np.asarray(shots.q_a, dtype=float), np.asarray(shots.q_b_truncated(n_bins))
    if isinstance(shots, tuple) and len(shots) == 2:
        if n_bins is not None:
            raise ValueError("n_bins needs binned shot records")
        q_a, q_b = (np.asarray(v, dtype=float) for v in shots)
        if q_a.shape != q_b.shape:
            raise ValueError("q_a and q_b must have the same length")
        return q_a, q_b
    records = list(shots)
    q_a = np.array([r.q_a for r in records], dtype=float)
    if n_bins is None:
        q_b = np.array([r.q_b for r in records], dtype=float)
    else:
        q_b = np.array([sum(r.q_b_bins[:n_bins]) for r in records], dtype=float)
    return q_a, q_b


def _moments(q_a, q_b):
    c = np.cov(q_a, q_b, ddof=1)
    return float(c[0, 0]), float(c[1, 1]), float(c[0, 1])


def _check_var_a(var_a, q_a):
    scale = float(np.mean(q_a * q_a)) if q_a.size else 0.0
    if not var_a > 1e-14 * max(scale, np.finfo(float).tiny):
        raise DegenerateInputError("Var(Q_A) is zero; Q_A carries no information")


def conditional_variance(shots, n_bins: int | None = None) -> tuple[float, float]:
    """Minimized variance ``Var(Q_B) - Cov^2/Var(Q_A)`` and the optimal gain ``Cov/Var(Q_A)``."""
    q_a, q_b = shot_arrays(shots, n_bins)
    if q_a.size < 2:
        raise DegenerateInputError("need at least two shots")
    var_a, var_b, cov = _moments(q_a, q_b)
    _check_var_a(var_a, q_a)
    alpha = cov / var_a
    return var_b - cov * alpha, alpha


@dataclass(frozen=True)
class SqueezingResult:
    """Squeezing estimate and its block-propagated standard errors.

    ``pn_b`` is the measured unconditional atomic noise Var(Q_B) - SN_B - EN_B.
    When a calibrated projection-noise reference ``pn_ref`` is supplied, the
    squeezing is referenced to it instead of ``pn_b``.
    """

    xi2: float
    xi2_db: float
    alpha: float
    var_a: float
    var_b: float
    cond_var: float
    sn_b: float
    en_b: float
    pn_b: float
    pn_ref: float | None
    n_shots: int
    n_blocks: int
    xi2_err: float
    xi2_db_err: float
    alpha_err: float
    var_a_err: float
    var_b_err: float
    cond_var_err: float
    pn_b_err: float

    @property
    def std_ratio(self) -> float:
        """Conditional over unconditional single-shot standard deviation."""
        return math.sqrt(self.cond_var / self.var_b)

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in asdict(self).items()}


def block_split(n: int, n_blocks: int) -> Sequence[slice]:
    size = n // n_blocks
    return [slice(i * size, (i + 1) * size) for i in range(n_blocks)]


def _block_moment_cov(q_a, q_b, n_blocks: int) -> np.ndarray:
    """Covariance of the mean of per-block (Var Q_A, Var Q_B, Cov) over ``n_blocks`` blocks."""
    size = q_a.size // n_blocks
    if n_blocks < 2 or size < 2:
        return np.full((3, 3), np.nan)
    stats = np.array([_moments(q_a[sl], q_b[sl]) for sl in block_split(q_a.size, n_blocks)])
    return np.atleast_2d(np.cov(stats, rowvar=False, ddof=1)) / n_blocks


def _propagate(grad, cov) -> float:
    grad = np.asarray(grad, dtype=float)
    return float(math.sqrt(max(grad @ cov @ grad, 0.0)))


def squeezing_metric(shots, sn_b: float, en_b: float = 0.0, *, pn_ref: float | None = None,
                     n_blocks: int = 9, n_bins: int | None = None,
                     min_pn_sigma: float = 2.0) -> SqueezingResult:
    """``xi2 = (Var(Q_B|Q_A) - SN_B - EN_B) / (Var(Q_B) - SN_B - EN_B)``.

    Parameters
    ----------
    shots
        Shot batch, list of records or ``(q_a, q_b)`` arrays.
    sn_b, en_b
        Shot and electronic noise of the verification pulse, in the units
        of the shots (they must refer to the same truncation as ``n_bins``).
    pn_ref
        Optional calibrated projection noise used as the denominator.
    n_blocks
        Number of blocks used for the error estimate.
    n_bins
        Truncate the verification pulse to its first ``n_bins`` bins.
    min_pn_sigma
        Without ``pn_ref`` the measured projection noise must exceed this many
        sampling standard deviations of Var(Q_B), ``Var(Q_B) sqrt(2/(N-1))``;
        otherwise the ratio is meaningless and :class:`NonpositivePNError` is
        raised.
    """
    if sn_b < 0 or en_b < 0:
        raise ValueError("sn_b and en_b must be nonnegative")
    q_a, q_b = shot_arrays(shots, n_bins)
    if q_a.size < 2:
        raise DegenerateInputError("need at least two shots")
    var_a, var_b, cov = _moments(q_a, q_b)
    _check_var_a(var_a, q_a)
    noise = sn_b + en_b
    pn_b = var_b - noise
    den = pn_b if pn_ref is None else float(pn_ref)
    if not den > 0:
        raise NonpositivePNError(
            f"projection-noise denominator {den:.6g} <= 0: check SN/EN calibration"
        )
    if pn_ref is None and pn_b < min_pn_sigma * var_b * math.sqrt(2.0 / (q_a.size - 1)):
        raise NonpositivePNError(
            f"measured projection noise {pn_b:.6g} is not resolved above the "
            f"sampling error of Var(Q_B)={var_b:.6g}"
        )
    alpha = cov / var_a
    cond = var_b - cov * alpha
    xi2 = (cond - noise) / den
    if not xi2 > 0:
        raise NonpositivePNError(
            f"conditional variance {cond:.6g} is below SN+EN={noise:.6g}"
        )

    mcov = _block_moment_cov(q_a, q_b, n_blocks)
    d_cond = np.array([alpha * alpha, 1.0, -2.0 * alpha])
    d_alpha = np.array([-alpha / var_a, 0.0, 1.0 / var_a])
    d_den = np.array([0.0, 1.0, 0.0]) if pn_ref is None else np.zeros(3)
    d_xi2 = d_cond / den - (cond - noise) / den**2 * d_den
    xi2_err = _propagate(d_xi2, mcov)
    return SqueezingResult(
        xi2=xi2,
        xi2_db=DB * math.log(xi2),
        alpha=alpha,
        var_a=var_a,
        var_b=var_b,
        cond_var=cond,
        sn_b=sn_b,
        en_b=en_b,
        pn_b=pn_b,
        pn_ref=None if pn_ref is None else float(pn_ref),
        n_shots=int(q_a.size),
        n_blocks=n_blocks,
        xi2_err=xi2_err,
        xi2_db_err=DB * xi2_err / xi2,
        alpha_err=_propagate(d_alpha, mcov),
        var_a_err=_propagate([1.0, 0.0, 0.0], mcov),
        var_b_err=_propagate([0.0, 1.0, 0.0], mcov),
        cond_var_err=_propagate(d_cond, mcov),
        pn_b_err=_propagate([0.0, 1.0, 0.0], mcov),
    )


def css_tss_ratio(spin: int = 4) -> float:
    """Coherent over thermal spin-noise variance, ``(F/2) / (F(F+1)/3 * w_F)``."""
    return (spin / 2) / (spin * (spin + 1) / 3 * f_manifold_fraction(spin))


def calibrate_pn_from_tss(tss_var: float, polarization: float = 1.0,
                          spin: int = 4) -> tuple[float, float]:
    """Projection noise of the coherent state from a thermal-state noise measurement.

    ``tss_var`` is the atomic part of the thermal-state variance (shot and
    electronic noise already removed). Returns ``(pn_css, correction)``;
    the spin noise of the partially polarized input is ``correction * pn_css``.
    """
    if not tss_var > 0:
        raise ValueError("thermal-state atomic variance must be positive")
    return css_tss_ratio(spin) * tss_var, polarization_correction(polarization, spin)


def snr(mean_signal: float, variance: float) -> float:
    if not variance > 0:
        raise ValueError("variance must be positive")
    return mean_signal / math.sqrt(variance)
