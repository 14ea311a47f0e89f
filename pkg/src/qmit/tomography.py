"""Magnetic induction tomography experiments run on the shot simulator.

The conductive sample is represented by its eddy-current field at the
sensor: a Gaussian in sample position with a fixed phase lag relative to the
primary RF field. Signals are background subtracted (sample-present batch
minus a no-sample batch). Conditional processing uses ``Q_B - alpha Q_A``
with ``alpha`` taken from the background batch.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimation import conditional_variance, squeezing_metric
from .fits import FitError, fit_gaussian_profile, fit_sinusoid, r_squared
from .rng import derive_seed, record_seeds
from .simulator import (
    ShotBatch,
    SimulationParams,
    correlated_pair_covariance,
    simulate_batch,
    simulate_seeds,
)
from .spin_dynamics import RfPulseParams

BACKGROUND_LABEL = 0xB6


class ScanFitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SampleResponse:
    """Eddy-current field of the sample as seen by the atoms.

    ``phase_offset`` is the lag of the eddy field behind the primary RF
    field; the signal in the lock-in quadrature peaks at that RF phase.
    """

    center: float = 0.0
    width: float = 5e-3
    peak_field: float = 0.0
    phase_offset: float = math.pi / 2

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("width must be positive")
        if self.peak_field < 0:
            raise ValueError("peak_field must be nonnegative")

    def field(self, position: float) -> float:
        return self.peak_field * math.exp(-0.5 * ((position - self.center) / self.width) ** 2)

    def field_phase(self, rf_phase: float) -> float:
        return rf_phase - self.phase_offset


def _rf_template(base: SimulationParams) -> RfPulseParams:
    if base.sequence.rf is not None:
        return base.sequence.rf
    return RfPulseParams.phase_clean_pulse(0.0, 0.0, approx_duration=47e-6,
                                           frequency=base.ensemble.larmor)


def sample_params(base: SimulationParams, sample: SampleResponse, rf_phase: float,
                  position: float) -> SimulationParams:
    """Simulation parameters with the sample at ``position`` and the RF drive at ``rf_phase``."""
    rf = _rf_template(base).replace(amplitude=sample.field(position),
                                    phase=sample.field_phase(rf_phase))
    return base.with_sequence(rf=rf, sample_position=position)


def background_params(base: SimulationParams) -> SimulationParams:
    return base.with_sequence(rf=_rf_template(base).replace(amplitude=0.0))


def _relabel(batch: ShotBatch, rf_phase: float) -> ShotBatch:
    batch.rf_phase[:] = rf_phase
    return batch


@dataclass(frozen=True)
class Background:
    mean_b: float
    mean_cond: float
    alpha: float
    n_reps: int


def measure_background(base: SimulationParams, n_reps: int, base_seed: int,
                       n_workers: int = 1) -> Background:
    batch = simulate_batch(background_params(base), n_reps,
                           derive_seed(base_seed, BACKGROUND_LABEL), n_workers=n_workers)
    _, alpha = conditional_variance(batch)
    return Background(float(batch.q_b.mean()), float((batch.q_b - alpha * batch.q_a).mean()),
                      alpha, n_reps)


# ---------------------------------------------------------------------------
# phase sweep


@dataclass(frozen=True)
class PhasePoint:
    phase: float
    signal: float
    signal_err: float
    signal_cond: float
    std_uncond: float
    std_cond: float
    snr_uncond: float
    snr_cond: float

    @property
    def reduction(self) -> float:
        """Relative reduction of the single-shot uncertainty by conditioning."""
        return 1.0 - self.std_cond / self.std_uncond


@dataclass(frozen=True)
class PhaseSweepResult:
    points: tuple
    alpha: float
    phase_max: float
    amplitude: float
    r2: float

    def rows(self) -> list[dict]:
        return [dict(asdict(p), phase_deg=math.degrees(p.phase), reduction=p.reduction)
                for p in self.points]

    def summary(self) -> dict:
        return {"alpha": self.alpha, "phase_max_deg": math.degrees(self.phase_max),
                "amplitude": self.amplitude, "r2": self.r2, "n_phases": len(self.points)}


def phase_sweep(base: SimulationParams, sample: SampleResponse, phases: Sequence[float],
                n_reps: int, base_seed: int, *, position: float | None = None,
                background_reps: int | None = None, n_workers: int = 1) -> PhaseSweepResult:
    """Background-subtracted signal and single-shot noise against RF phase (radians)."""
    phases = [float(p) for p in phases]
    if not phases:
        raise ValueError("phases must be nonempty")
    if n_reps < 2:
        raise ValueError("n_reps must be >= 2")
    pos = sample.center if position is None else position
    bg = measure_background(base, background_reps or n_reps, base_seed, n_workers)
    points = []
    for k, phase in enumerate(phases):
        p = sample_params(base, sample, phase, pos)
        batch = _relabel(simulate_batch(p, n_reps, derive_seed(base_seed, k), n_workers=n_workers),
                         phase)
        cond = batch.q_b - bg.alpha * batch.q_a
        std_u = float(batch.q_b.std(ddof=1))
        std_c = float(cond.std(ddof=1))
        sig = float(batch.q_b.mean()) - bg.mean_b
        sig_c = float(cond.mean()) - bg.mean_cond
        err = std_u * math.sqrt(1.0 / n_reps + 1.0 / bg.n_reps)
        points.append(PhasePoint(phase, sig, err, sig_c, std_u, std_c, sig / std_u, sig_c / std_c))
    if len(phases) >= 3:
        fit = fit_sinusoid(phases, [pt.signal for pt in points])
        phase_max, amp, r2 = fit["phase_max"], fit["amplitude"], r_squared(fit)
    else:
        phase_max, amp, r2 = math.nan, math.nan, math.nan
    return PhaseSweepResult(tuple(points), bg.alpha, phase_max, amp, r2)


def expected_signal(base: SimulationParams, sample: SampleResponse, rf_phase: float,
                    position: float) -> float:
    """Noiseless background-subtracted mean of Q_B."""
    return float(correlated_pair_covariance(sample_params(base, sample, rf_phase, position)).mean[1])


# ---------------------------------------------------------------------------
# 1D scan


def gaussian_jacobian(positions, center, width, amplitude):
    x = np.asarray(positions, dtype=float)
    u = (x - center) / width
    e = np.exp(-0.5 * u * u)
    return np.column_stack([amplitude * e * u / width, amplitude * e * u * u / width, e,
                            np.ones_like(x)])


def predicted_center_std(positions, center: float, width: float, amplitude: float,
                         noise_std: float) -> float:
    """Linearized least-squares standard deviation of the fitted center.

    ``noise_std`` is the standard deviation of each averaged point.
    """
    jac = gaussian_jacobian(positions, center, width, amplitude)
    return float(noise_std * math.sqrt(np.linalg.inv(jac.T @ jac)[0, 0]))


def scan_positions(n_positions: int = 50, step: float = 1e-3, center: float = 0.0) -> np.ndarray:
    return center + (np.arange(n_positions) - (n_positions - 1) / 2) * step


@dataclass
class ScanResult:
    positions: np.ndarray
    mean_uncond: np.ndarray
    err_uncond: np.ndarray
    mean_cond: np.ndarray
    err_cond: np.ndarray
    centers_uncond: np.ndarray
    centers_cond: np.ndarray
    alpha: float
    n_reps: int
    failed: list = field(default_factory=list)

    def _valid(self, centers):
        return centers[np.isfinite(centers)]

    @property
    def std_uncond(self) -> float:
        return float(np.std(self._valid(self.centers_uncond), ddof=1))

    @property
    def std_cond(self) -> float:
        return float(np.std(self._valid(self.centers_cond), ddof=1))

    @property
    def improvement(self) -> float:
        return self.std_uncond / self.std_cond

    def summary(self) -> dict:
        return {
            "n_scans": int(self.centers_uncond.size),
            "n_positions": int(self.positions.size),
            "n_reps": self.n_reps,
            "alpha": self.alpha,
            "center_mean_uncond": float(np.mean(self._valid(self.centers_uncond))),
            "center_mean_cond": float(np.mean(self._valid(self.centers_cond))),
            "center_std_uncond": self.std_uncond,
            "center_std_cond": self.std_cond,
            "improvement": self.improvement,
            "failed_fits": list(self.failed),
        }

    def table_rows(self) -> list[dict]:
        return [
            {"position": float(x), "mean_uncond": float(mu), "err_uncond": float(eu),
             "mean_cond": float(mc), "err_cond": float(ec)}
            for x, mu, eu, mc, ec in zip(self.positions, self.mean_uncond, self.err_uncond,
                                         self.mean_cond, self.err_cond)
        ]

    def center_rows(self) -> list[dict]:
        return [{"scan": i, "center_uncond": float(u), "center_cond": float(c)}
                for i, (u, c) in enumerate(zip(self.centers_uncond, self.centers_cond))]

    def histogram_rows(self, bins: int = 20) -> list[dict]:
        both = np.concatenate([self._valid(self.centers_uncond), self._valid(self.centers_cond)])
        edges = np.histogram_bin_edges(both, bins=bins)
        hu, _ = np.histogram(self._valid(self.centers_uncond), edges)
        hc, _ = np.histogram(self._valid(self.centers_cond), edges)
        return [{"left": float(edges[i]), "right": float(edges[i + 1]),
                 "count_uncond": int(hu[i]), "count_cond": int(hc[i])}
                for i in range(bins)]


def _fit_center(positions, signal):
    fit = fit_gaussian_profile(positions, signal)
    if "degenerate_width" in fit.flags:
        raise FitError("fitted width not larger than the grid step")
    return fit["center"]


def scan_1d(base: SimulationParams, sample: SampleResponse, positions: Sequence[float],
            n_reps_per_pos: int, n_scans: int, base_seed: int, *, rf_phase: float = math.pi / 2,
            background_reps: int = 16000, refit_alpha: bool = False,
            n_workers: int = 1) -> ScanResult:
    """Repeated 1D scans with a Gaussian center fit per scan.

    With ``refit_alpha`` the gain is re-estimated from each position's own
    shots instead of being frozen from the background run.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.size < 4:
        raise ValueError("a scan needs at least four positions")
    if n_reps_per_pos < 2 or n_scans < 1:
        raise ValueError("need n_reps_per_pos >= 2 and n_scans >= 1")
    bg = measure_background(base, background_reps, base_seed, n_workers)
    sig_u = np.empty((n_scans, pos.size))
    sig_c = np.empty((n_scans, pos.size))
    var_u = np.empty(pos.size)
    var_c = np.empty(pos.size)
    for i, x in enumerate(pos):
        p = sample_params(base, sample, rf_phase, float(x))
        idx = np.arange(n_scans * n_reps_per_pos, dtype=np.int64)
        seeds = record_seeds(derive_seed(base_seed, i), idx)
        batch = simulate_seeds(p, seeds, idx, n_workers=n_workers)
        q_a = batch.q_a.reshape(n_scans, n_reps_per_pos)
        q_b = batch.q_b.reshape(n_scans, n_reps_per_pos)
        alpha = bg.alpha
        if refit_alpha:
            _, alpha = conditional_variance((batch.q_a, batch.q_b))
        cond = q_b - alpha * q_a
        sig_u[:, i] = q_b.mean(axis=1) - bg.mean_b
        sig_c[:, i] = cond.mean(axis=1) - bg.mean_cond
        var_u[i] = q_b.var(axis=1, ddof=1).mean()
        var_c[i] = cond.var(axis=1, ddof=1).mean()
    centers_u = np.full(n_scans, np.nan)
    centers_c = np.full(n_scans, np.nan)
    failed = []
    for s in range(n_scans):
        for label, sig, out in (("uncond", sig_u, centers_u), ("cond", sig_c, centers_c)):
            try:
                out[s] = _fit_center(pos, sig[s])
            except FitError as exc:
                failed.append({"scan": s, "processing": label, "error": str(exc)})
                warnings.warn(f"scan {s} ({label}) excluded: {exc}", ScanFitWarning, stacklevel=2)
    return ScanResult(pos, sig_u.mean(axis=0), np.sqrt(var_u / n_reps_per_pos),
                      sig_c.mean(axis=0), np.sqrt(var_c / n_reps_per_pos),
                      centers_u, centers_c, bg.alpha, n_reps_per_pos, failed)


def scan_duration_estimate(n_positions: int, n_reps: int, per_rep_time: float = 13e-3) -> float:
    """Wall-clock time of a scan, ``n_positions * n_reps * per_rep_time`` (s)."""
    if n_positions < 0 or n_reps < 0 or per_rep_time < 0:
        raise ValueError("scan duration inputs must be nonnegative")
    return n_positions * n_reps * per_rep_time


# ---------------------------------------------------------------------------
# squeezing against gap duration


@dataclass(frozen=True)
class GapPoint:
    gap: float
    xi2_db: float
    xi2_db_err: float
    predicted_db: float


def gap_squeezing_sweep(base: SimulationParams, gaps: Sequence[float], n_reps: int,
                        base_seed: int, *, n_blocks: int = 9, n_workers: int = 1) -> list[GapPoint]:
    """Simulate and analyze the squeezing at each gap (the RF pulse is removed)."""
    out = []
    for k, gap in enumerate(gaps):
        if gap < 0:
            raise ValueError("gaps must be nonnegative")
        p = base.with_sequence(gap=float(gap), rf=None)
        batch = simulate_batch(p, n_reps, derive_seed(base_seed, k), n_workers=n_workers)
        tau_b = p.sequence.tau_b
        res = squeezing_metric(batch, p.shot_noise(tau_b), p.electronic(tau_b), n_blocks=n_blocks)
        pred = correlated_pair_covariance(p).xi2_db()
        out.append(GapPoint(float(gap), res.xi2_db, res.xi2_db_err, pred))
    return out


# ---------------------------------------------------------------------------
# output


def write_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if not rows:
            return path
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
