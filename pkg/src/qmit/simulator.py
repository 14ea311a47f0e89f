"""Gaussian-state Monte Carlo of the two-pulse stroboscopic QND sequence.

Model
-----
One latent variable ``x`` describes the measured transverse spin component in
the rotating frame, normalized so that the coherent spin state of all N_A
atoms has unit variance. The sequence is squeezing pulse A, a gap (optionally
with an RF pulse at its end) and verification pulse B. Probe pulses are cut
into bins of width ``bin_width``; inside a bin ``x`` obeys

    dx = -gamma x dt + sqrt(2 V gamma) dW + sqrt(k C) dW'

where ``V`` is the stationary atomic variance (the polarization correction),
``gamma = 1/T2 + r_probe`` the relaxation rate while the probe is on,
``k = kappa2 / tau`` the coupling rate and ``C`` the back-action leakage
factor of the duty cycle. The random walk driven by
``dW'`` integrates to exactly ``k^2 C tau^3 / 3`` over a pulse, which is the
back-action term of the stroboscopic noise budget. Each bin records

    q = g * integral((x + c) dt) + white shot and electronic noise,

with ``g^2 = (eta / tau) * k`` so that the projection noise of a pulse equals
``kappa2`` shot-noise units. Shot noise accumulates at ``eta / tau`` SNU per
second, electronic noise at ``en / tau``. ``c`` is a classical offset drawn
once per repetition (slow technical field noise); it is common to both
pulses and is not refreshed by decoherence. The coupling decays with T1 (the
macroscopic spin shrinks), and a demodulation phase error multiplies ``g``.

In the gap ``x`` relaxes towards its stationary variance,

    x -> a x + sqrt(V (1 - a^2)) w,   a = exp(-gap (1/T2 + r_coil) - (gap / T_dark)^2),

and the RF pulse shifts its mean by the projected transverse response.

Each bin transition is discretized exactly (Van Loan), so the moment
propagation in :func:`correlated_pair_covariance` gives the exact first and
second moments of what :func:`simulate_batch` samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy.linalg import expm

from .coefficients import StroboscopicParams
from .rng import RecordStream, record_seeds
from .spin_dynamics import (
    EnsembleParams,
    RfPulseParams,
    polarization_correction,
    transverse_response,
)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SequenceParams:
    """Timing of one repetition; all durations in seconds.

    ``demod_phase`` is the mismatch between the lock-in reference and the
    stroboscopic phase. The RF pulse, if any, ends where pulse B starts.
    """

    tau_a: float = 220e-6
    gap: float = 0.0
    tau_b: float = 40e-6
    rf: RfPulseParams | None = None
    demod_phase: float = 0.0
    bin_width: float = 10e-6
    sample_position: float = 0.0

    def __post_init__(self):
        if not (self.tau_a > 0 and self.tau_b > 0):
            raise SimulationError("tau_a and tau_b must be positive")
        if self.gap < 0:
            raise SimulationError("gap must be nonnegative")
        if not self.bin_width > 0:
            raise SimulationError("bin_width must be positive")
        for name in ("tau_a", "tau_b"):
            _bin_count(getattr(self, name), self.bin_width, name)
        if self.rf is not None and self.rf.duration > self.gap * (1 + 1e-12):
            raise SimulationError(
                f"RF pulse ({self.rf.duration:.3g} s) does not fit in the gap ({self.gap:.3g} s)"
            )

    @property
    def n_bins_a(self) -> int:
        return _bin_count(self.tau_a, self.bin_width, "tau_a")

    @property
    def n_bins_b(self) -> int:
        return _bin_count(self.tau_b, self.bin_width, "tau_b")

    def replace(self, **changes) -> "SequenceParams":
        return replace(self, **changes)


def _bin_count(tau: float, width: float, name: str) -> int:
    n = round(tau / width)
    if n < 1 or abs(n * width - tau) > 1e-9 * tau:
        raise SimulationError(f"bin_width {width:.3g} s does not divide {name}={tau:.3g} s")
    return n


@dataclass(frozen=True)
class DecoherenceModel:
    """Relaxation of the atomic variable.

    ``t2`` drives the Ornstein-Uhlenbeck decay during the whole sequence and
    ``t1`` the loss of coupling strength. ``probe_rate`` adds decay while the
    probe is on (scattering of probe photons). In the gap two extra channels act:
    a constant rate ``coil_rate`` (RF coils connected to the generator) and a
    Gaussian dephasing with time constant ``dark_time``. ``classical_noise``
    is the variance (CSS units) of a quasi-static classical offset of the
    measured spin component, fixed within one repetition. ``inf`` disables a time constant.
    """

    t2: float = 2.35e-3
    t1: float = math.inf
    probe_rate: float = 0.0
    coil_rate: float = 0.0
    dark_time: float = math.inf
    classical_noise: float = 0.0

    def __post_init__(self):
        if not (self.t2 > 0 and self.t1 > 0 and self.dark_time > 0):
            raise SimulationError("time constants must be positive")
        if min(self.probe_rate, self.coil_rate, self.classical_noise) < 0:
            raise SimulationError("rates and classical_noise must be nonnegative")

    def gap_survival(self, gap: float) -> float:
        """Amplitude correlation of the atomic variable across a gap."""
        rate = 1.0 / self.t2 + self.coil_rate
        return math.exp(-gap * rate - (gap / self.dark_time) ** 2)

    def replace(self, **changes) -> "DecoherenceModel":
        return replace(self, **changes)


@dataclass(frozen=True)
class SimulationParams:
    ensemble: EnsembleParams
    strobo: StroboscopicParams
    sequence: SequenceParams
    decoherence: DecoherenceModel = DecoherenceModel()
    electronic_noise: float = 0.0

    def __post_init__(self):
        if self.electronic_noise < 0:
            raise SimulationError("electronic_noise must be nonnegative")

    def replace(self, **changes) -> "SimulationParams":
        return replace(self, **changes)

    def with_sequence(self, **changes) -> "SimulationParams":
        return replace(self, sequence=replace(self.sequence, **changes))

    def with_decoherence(self, **changes) -> "SimulationParams":
        return replace(self, decoherence=replace(self.decoherence, **changes))

    def with_strobo(self, **changes) -> "SimulationParams":
        return replace(self, strobo=replace(self.strobo, **changes))

    @property
    def sn_rate(self) -> float:
        return self.strobo.eta / self.strobo.tau

    @property
    def en_rate(self) -> float:
        return self.electronic_noise / self.strobo.tau

    @property
    def stationary_variance(self) -> float:
        ens = self.ensemble
        return 1.0 if ens.polarization == 1.0 else polarization_correction(ens.polarization, ens.spin)

    def shot_noise(self, duration: float) -> float:
        return self.sn_rate * duration

    def electronic(self, duration: float) -> float:
        return self.en_rate * duration

    def signal_shift(self) -> float:
        """Mean displacement of the atomic variable produced by the RF pulse."""
        rf = self.sequence.rf
        if rf is None:
            return 0.0
        ens = self.ensemble
        if ens.n_atoms == 0:
            return 0.0
        spin_units = transverse_response(ens, rf)
        return spin_units / math.sqrt(ens.spin * ens.n_atoms / 2) * math.cos(rf.phase)


# ---------------------------------------------------------------------------
# discretized dynamics


class _Probe(NamedTuple):
    segment: str  # "a" or "b"
    phi_x: float  # x_end = phi_x x + e0
    phi_i: float  # integral over bin = phi_i x + e1
    l00: float
    l10: float
    l11: float
    q: tuple  # 2x2 covariance of (e0, e1), flattened
    gain: float
    meas_var: float
    dt: float


class _Gap(NamedTuple):
    survival: float
    fresh_var: float
    shift: float


def _bin_transition(dt: float, gamma: float, sigma2: float):
    """Exact transition of (x, integral of x) over one bin (Van Loan)."""
    a = np.array([[-gamma, 0.0], [1.0, 0.0]])
    qc = np.array([[sigma2, 0.0], [0.0, 0.0]])
    m = np.zeros((4, 4))
    m[:2, :2] = -a
    m[:2, 2:] = qc
    m[2:, 2:] = a.T
    e = expm(m * dt)
    phi = e[2:, 2:].T
    qd = phi @ e[:2, 2:]
    qd = 0.5 * (qd + qd.T)
    return phi, qd


def _chol2(q):
    l00 = math.sqrt(max(q[0, 0], 0.0))
    l10 = q[1, 0] / l00 if l00 > 0 else 0.0
    l11 = math.sqrt(max(q[1, 1] - l10 * l10, 0.0))
    return l00, l10, l11


def _probe_steps(p: SimulationParams, segment: str, t0: float, n_bins: int,
                 stationary: float, back_action: bool = True):
    seq, dec, strobo = p.sequence, p.decoherence, p.strobo
    dt = seq.bin_width
    gamma = (0.0 if math.isinf(dec.t2) else 1.0 / dec.t2) + dec.probe_rate
    k_rate = strobo.kappa_rate
    g0 = math.sqrt(p.sn_rate * k_rate) * math.cos(seq.demod_phase)
    meas_var = (p.sn_rate + p.en_rate) * dt
    steps = []
    for j in range(n_bins):
        t = t0 + j * dt
        jx_frac = 1.0 if math.isinf(dec.t1) else math.exp(-t / dec.t1)
        d_b = k_rate * strobo.back_action * jx_frac if back_action else 0.0
        phi, q = _bin_transition(dt, gamma, 2 * gamma * stationary + d_b)
        l00, l10, l11 = _chol2(q)
        steps.append(_Probe(segment, phi[0, 0], phi[1, 0], l00, l10, l11,
                            tuple(q.ravel()), g0 * math.sqrt(jx_frac), meas_var, dt))
    return steps


@lru_cache(maxsize=256)
def _plan(p: SimulationParams):
    seq = p.sequence
    v = p.stationary_variance
    steps = _probe_steps(p, "a", 0.0, seq.n_bins_a, v)
    a = p.decoherence.gap_survival(seq.gap)
    steps.append(_Gap(a, v * (1 - a * a), p.signal_shift()))
    steps += _probe_steps(p, "b", seq.tau_a + seq.gap, seq.n_bins_b, v)
    return tuple(steps)


def n_draws(p: SimulationParams) -> int:
    """Standard normals consumed per repetition."""
    return 1 + 3 * p.sequence.n_bins_a + 1 + 3 * p.sequence.n_bins_b + 1


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class ShotRecord:
    q_a: float
    q_b: float
    q_b_bins: tuple
    rf_phase: float
    position: float
    index: int
    seed: int


class ShotBatch(Sequence):
    """Columnar store of repetitions; behaves as a sequence of :class:`ShotRecord`."""

    def __init__(self, q_a, q_b_bins, rf_phase, position, index, seed):
        self.q_a = np.asarray(q_a, dtype=float)
        self.q_b_bins = np.atleast_2d(np.asarray(q_b_bins, dtype=float))
        n = self.q_a.shape[0]
        if self.q_b_bins.shape[0] != n:
            raise ValueError("q_a and q_b_bins disagree on the number of records")
        self.rf_phase = np.broadcast_to(np.asarray(rf_phase, dtype=float), (n,)).copy()
        self.position = np.broadcast_to(np.asarray(position, dtype=float), (n,)).copy()
        self.index = np.asarray(index, dtype=np.int64)
        self.seed = np.asarray(seed, dtype=np.uint64)
        self.q_b = self.q_b_bins.sum(axis=1)

    def __len__(self) -> int:
        return self.q_a.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ShotBatch(self.q_a[i], self.q_b_bins[i], self.rf_phase[i],
                             self.position[i], self.index[i], self.seed[i])
        return ShotRecord(
            float(self.q_a[i]), float(self.q_b[i]), tuple(self.q_b_bins[i].tolist()),
            float(self.rf_phase[i]), float(self.position[i]), int(self.index[i]),
            int(self.seed[i]),
        )

    def __iter__(self) -> Iterator[ShotRecord]:
        for i in range(len(self)):
            yield self[i]

    def q_b_truncated(self, n_bins: int | None = None) -> np.ndarray:
        """Verification outcome using only the first ``n_bins`` bins of pulse B."""
        if n_bins is None or n_bins == self.q_b_bins.shape[1]:
            return self.q_b
        if not 1 <= n_bins <= self.q_b_bins.shape[1]:
            raise ValueError(f"n_bins must lie in [1, {self.q_b_bins.shape[1]}]")
        return self.q_b_bins[:, :n_bins].sum(axis=1)

    @classmethod
    def from_records(cls, records: Sequence[ShotRecord]) -> "ShotBatch":
        records = list(records)
        return cls(
            [r.q_a for r in records], [r.q_b_bins for r in records],
            [r.rf_phase for r in records], [r.position for r in records],
            [r.index for r in records], [r.seed for r in records],
        )

    @classmethod
    def concat(cls, batches: Sequence["ShotBatch"]) -> "ShotBatch":
        return cls(
            np.concatenate([b.q_a for b in batches]),
            np.concatenate([b.q_b_bins for b in batches]),
            np.concatenate([b.rf_phase for b in batches]),
            np.concatenate([b.position for b in batches]),
            np.concatenate([b.index for b in batches]),
            np.concatenate([b.seed for b in batches]),
        )


# ---------------------------------------------------------------------------
# sampling


def _propagate_samples(p: SimulationParams, z: np.ndarray):
    plan = _plan(p)
    n = z.shape[0]
    x = math.sqrt(p.stationary_variance) * z[:, 0]
    c = math.sqrt(p.decoherence.classical_noise) * z[:, -1]
    col = 1
    q_a = np.zeros(n)
    b_bins = []
    for step in plan:
        if isinstance(step, _Gap):
            x = step.survival * x + math.sqrt(step.fresh_var) * z[:, col] + step.shift
            col += 1
            continue
        z0, z1, z2 = z[:, col], z[:, col + 1], z[:, col + 2]
        col += 3
        e0 = step.l00 * z0
        e1 = step.l10 * z0 + step.l11 * z1
        q = step.gain * (step.phi_i * x + e1 + step.dt * c) + math.sqrt(step.meas_var) * z2
        x = step.phi_x * x + e0
        if step.segment == "a":
            q_a += q
        else:
            b_bins.append(q)
    return q_a, np.column_stack(b_bins)


def _simulate_chunk(p: SimulationParams, seeds: np.ndarray):
    stream = RecordStream()
    z = stream.normals_many(seeds, n_draws(p))
    return _propagate_samples(p, z)


def _chunks(n: int, size: int):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def simulate_seeds(p: SimulationParams, seeds: np.ndarray, indices: np.ndarray,
                   n_workers: int = 1, chunk_size: int = 20000,
                   progress: Callable[[int, int], None] | None = None) -> ShotBatch:
    seeds = np.asarray(seeds, dtype=np.uint64)
    n = seeds.shape[0]
    bounds = _chunks(n, chunk_size)
    parts = []
    done = 0
    if n_workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_simulate_chunk, p, seeds[lo:hi]) for lo, hi in bounds]
            for (lo, hi), fut in zip(bounds, futures):
                parts.append(fut.result())
                done += hi - lo
                if progress:
                    progress(done, n)
    else:
        for lo, hi in bounds:
            parts.append(_simulate_chunk(p, seeds[lo:hi]))
            done += hi - lo
            if progress:
                progress(done, n)
    q_a = np.concatenate([a for a, _ in parts])
    q_b = np.concatenate([b for _, b in parts])
    rf = p.sequence.rf
    return ShotBatch(q_a, q_b, rf.phase if rf else 0.0, p.sequence.sample_position,
                     indices, seeds)


def simulate_batch(p: SimulationParams, n_reps: int, base_seed: int, *,
                   start_index: int = 0, n_workers: int = 1,
                   progress: Callable[[int, int], None] | None = None) -> ShotBatch:
    """Simulate ``n_reps`` repetitions with seeds derived from ``base_seed``.

    Record ``i`` depends only on ``(base_seed, start_index + i)`` and the
    parameters, never on chunking or the number of workers.
    """
    if n_reps < 1:
        raise SimulationError("n_reps must be >= 1")
    indices = np.arange(start_index, start_index + n_reps, dtype=np.int64)
    seeds = record_seeds(base_seed, indices)
    return simulate_seeds(p, seeds, indices, n_workers=n_workers, progress=progress)


def simulate_shot(p: SimulationParams, seed: int, index: int = 0) -> ShotRecord:
    batch = simulate_seeds(p, np.array([seed], dtype=np.uint64), np.array([index]))
    return batch[0]


# ---------------------------------------------------------------------------
# exact moments


class PairMoments(NamedTuple):
    mean: np.ndarray  # (E[Q_A], E[Q_B])
    cov: np.ndarray  # 2x2
    sn_a: float
    en_a: float
    sn_b: float
    en_b: float

    @property
    def var_a(self) -> float:
        return float(self.cov[0, 0])

    @property
    def var_b(self) -> float:
        return float(self.cov[1, 1])

    @property
    def covariance(self) -> float:
        return float(self.cov[0, 1])

    @property
    def alpha(self) -> float:
        return self.covariance / self.var_a

    @property
    def cond_var(self) -> float:
        return self.var_b - self.covariance**2 / self.var_a

    def xi2(self, pn_ref: float | None = None) -> float:
        """Squeezing parameter; relative to ``pn_ref`` when given, else to Var(Q_B) - SN - EN."""
        noise = self.sn_b + self.en_b
        den = self.var_b - noise if pn_ref is None else pn_ref
        return (self.cond_var - noise) / den

    def xi2_db(self, pn_ref: float | None = None) -> float:
        return 10 * math.log10(self.xi2(pn_ref))


def _propagate_moments(plan, x_var: float, c_var: float, n_bins_b: int | None):
    # state: atomic x, classical offset c, Q_A, Q_B
    mean = np.zeros(4)
    cov = np.zeros((4, 4))
    cov[0, 0] = x_var
    cov[1, 1] = c_var
    b_seen = 0
    for step in plan:
        if isinstance(step, _Gap):
            t = np.diag([step.survival, 1.0, 1.0, 1.0])
            cov = t @ cov @ t.T
            cov[0, 0] += step.fresh_var
            mean = t @ mean
            mean[0] += step.shift
            continue
        if step.segment == "b":
            if n_bins_b is not None and b_seen >= n_bins_b:
                continue
            b_seen += 1
        out = 2 if step.segment == "a" else 3
        q = np.asarray(step.q).reshape(2, 2)
        g = step.gain
        t = np.eye(4)
        t[0, 0] = step.phi_x
        t[out, 0] = g * step.phi_i
        t[out, 1] = g * step.dt
        noise = np.zeros((4, 4))
        noise[0, 0] = q[0, 0]
        noise[0, out] = noise[out, 0] = g * q[0, 1]
        noise[out, out] = g * g * q[1, 1] + step.meas_var
        cov = t @ cov @ t.T + noise
        mean = t @ mean
    return mean, cov


def correlated_pair_covariance(p: SimulationParams, n_bins_b: int | None = None) -> PairMoments:
    """Exact mean and covariance of (Q_A, Q_B) under the simulator's model.

    ``n_bins_b`` truncates pulse B to its first bins, as done in analysis.
    """
    seq = p.sequence
    nb = seq.n_bins_b if n_bins_b is None else n_bins_b
    if not 1 <= nb <= seq.n_bins_b:
        raise ValueError(f"n_bins_b must lie in [1, {seq.n_bins_b}]")
    mean, cov = _propagate_moments(_plan(p), p.stationary_variance,
                                   p.decoherence.classical_noise, nb)
    tau_b = nb * seq.bin_width
    return PairMoments(
        mean[2:].copy(), cov[2:, 2:].copy(),
        p.shot_noise(seq.tau_a), p.electronic(seq.tau_a),
        p.shot_noise(tau_b), p.electronic(tau_b),
    )


def css_projection_noise(p: SimulationParams, n_bins_b: int | None = None) -> float:
    """Projection noise of pulse B for an ideal coherent spin state.

    This is the reference a thermal-state calibration provides: unit atomic
    variance at the start of B, no back-action, no excess noise.
    """
    seq = p.sequence
    nb = seq.n_bins_b if n_bins_b is None else n_bins_b
    steps = _probe_steps(p, "b", seq.tau_a + seq.gap, nb, 1.0, back_action=False)
    _, cov = _propagate_moments(steps, 1.0, 0.0, None)
    tau_b = nb * seq.bin_width
    return float(cov[3, 3] - p.shot_noise(tau_b) - p.electronic(tau_b))


def projection_noise_a(p: SimulationParams) -> float:
    """Atomic (projection plus back-action) contribution to Var(Q_A)."""
    m = correlated_pair_covariance(p)
    return m.var_a - m.sn_a - m.en_a


def predicted_xi2_db(p: SimulationParams, n_bins_b: int | None = None,
                     pn_ref: float | None = None) -> float:
    return correlated_pair_covariance(p, n_bins_b).xi2_db(pn_ref)


def sweep_gap(p: SimulationParams, gaps: Sequence[float]) -> list[tuple[float, float]]:
    """Predicted squeezing (dB) against gap duration. The RF pulse is dropped."""
    out = []
    for gap in gaps:
        if gap < 0:
            raise SimulationError("gaps must be nonnegative")
        q = p.with_sequence(gap=float(gap), rf=None)
        out.append((float(gap), predicted_xi2_db(q)))
    return out
