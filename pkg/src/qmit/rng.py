"""Counter-based random streams, one per repetition.

Stream splitting: repetition ``i`` of a batch with base seed ``s`` gets the
64-bit record seed ``splitmix64(splitmix64(s) + (i + 1) * GOLDEN)``. The
record's normals are drawn from numpy's Philox-4x64 keyed with
``(record_seed, STREAM_TAG)`` starting at counter zero, so a record never
depends on which other records are generated, in what order or in which
process.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
STREAM_TAG = 0x514D4954  # "QMIT"


def splitmix64(z):
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def record_seeds(base_seed: int, indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.uint64)
    base = splitmix64(np.uint64(int(base_seed) & _MASK))
    with np.errstate(over="ignore"):
        z = base + (idx + np.uint64(1)) * np.uint64(GOLDEN)
    return splitmix64(z)


def derive_seed(base_seed: int, *labels: int) -> int:
    """Deterministic sub-seed for a labelled task (phase index, scan number, ...)."""
    z = int(base_seed) & _MASK
    for label in labels:
        z = int(record_seeds(z, [int(label) & _MASK])[0])
    return z


class RecordStream:
    """Re-keys a single Philox generator per record.

    Equivalent to ``Generator(Philox(key=np.array([seed, STREAM_TAG],
    dtype=np.uint64)))`` for each record, without rebuilding the generator
    objects. (A plain Python list as key would pass through float64 and lose
    the low bits of seeds above 2**53.)
    """

    def __init__(self):
        self._bitgen = np.random.Philox(key=[0, STREAM_TAG])
        self._gen = np.random.Generator(self._bitgen)
        self._state = self._bitgen.state

    def reset(self, seed: int):
        st = self._state
        st["state"]["key"] = np.array([int(seed) & _MASK, STREAM_TAG], dtype=np.uint64)
        st["state"]["counter"] = np.zeros(4, dtype=np.uint64)
        st["buffer"] = np.zeros(4, dtype=np.uint64)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st

    def normals(self, seed: int, n: int) -> np.ndarray:
        self.reset(seed)
        return self._gen.standard_normal(n)

    def normals_many(self, seeds, n: int) -> np.ndarray:
        seeds = np.asarray(seeds, dtype=np.uint64)
        out = np.empty((seeds.shape[0], n))
        for row, seed in enumerate(seeds.tolist()):
            self.reset(seed)
            out[row] = self._gen.standard_normal(n)
        return out
