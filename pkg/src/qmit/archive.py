"""Line-delimited JSON shot archives.

The first line is a header object; every following line is one shot record.
The header carries the format version, the full configuration snapshot and
its hash, the sublevel populations of the ensemble, the declared record
count and the SHA-256 of the record section (all bytes after the header
line). Floats are written with ``repr`` so reading back is exact, and no
timestamps are stored, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .simulator import ShotBatch
from .spin_dynamics import PopulationDistribution, spin_temperature

FORMAT = "qmit-shots"
FORMAT_VERSION = 1


class ArchiveError(Exception):
    """The archive cannot be used."""


class VersionError(ArchiveError):
    pass


class ChecksumError(ArchiveError):
    pass


def _package_version() -> str:
    from . import __version__

    return __version__


def _record_line(batch: ShotBatch, i: int) -> str:
    row = {
        "index": int(batch.index[i]),
        "q_a": float(batch.q_a[i]),
        "q_b_bins": [float(v) for v in batch.q_b_bins[i]],
        "rf_phase": float(batch.rf_phase[i]),
        "position": float(batch.position[i]),
        "seed": int(batch.seed[i]),
    }
    return json.dumps(row, separators=(",", ":")) + "\n"


def encode(batch: ShotBatch, config: RunConfig) -> bytes:
    body = "".join(_record_line(batch, i) for i in range(len(batch))).encode()
    ens = config.ensemble()
    header = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "package_version": _package_version(),
        "config": config.to_dict(),
        "config_sha256": config.sha256,
        "populations": spin_temperature(ens.polarization, ens.spin).to_dict(),
        "n_records": len(batch),
        "n_bins_b": int(batch.q_b_bins.shape[1]),
        "records_sha256": hashlib.sha256(body).hexdigest(),
    }
    return (json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode() + body


def write_archive(path, batch: ShotBatch, config: RunConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(batch, config))
    return path


class ShotArchive:
    """A decoded archive: header fields, configuration and shots."""

    def __init__(self, header: dict, config: RunConfig, batch: ShotBatch):
        self.header = header
        self.config = config
        self.batch = batch

    @property
    def populations(self) -> PopulationDistribution:
        return PopulationDistribution.from_dict(self.header["populations"])

    def __len__(self):
        return len(self.batch)


def decode(data: bytes) -> ShotArchive:
    head, sep, body = data.partition(b"\n")
    if not sep:
        raise ArchiveError("archive has no header line")
    try:
        header = json.loads(head)
    except (UnicodeDecodeError, ValueError) as exc:
        raise ArchiveError(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise ArchiveError("not a shot archive")
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(f"archive version {header.get('version')!r}; "
                           f"this package reads version {FORMAT_VERSION}")
    if hashlib.sha256(body).hexdigest() != header.get("records_sha256"):
        raise ChecksumError("record section checksum mismatch")
    try:
        config = RunConfig.from_dict(header["config"])
    except (KeyError, ConfigError) as exc:
        raise ArchiveError(f"embedded configuration is invalid: {exc}") from exc
    if config.sha256 != header.get("config_sha256"):
        raise ChecksumError("configuration hash mismatch")
    lines = body.decode().splitlines()
    if len(lines) != header.get("n_records"):
        raise ArchiveError(f"declared {header.get('n_records')} records, found {len(lines)}")
    n_bins = header.get("n_bins_b")
    rows = [json.loads(line) for line in lines]
    if any(len(r["q_b_bins"]) != n_bins for r in rows):
        raise ArchiveError("record bin count disagrees with header")
    if rows:
        batch = ShotBatch([r["q_a"] for r in rows], [r["q_b_bins"] for r in rows],
                          [r["rf_phase"] for r in rows], [r["position"] for r in rows],
                          [r["index"] for r in rows], [r["seed"] for r in rows])
    else:
        batch = ShotBatch(np.zeros(0), np.zeros((0, n_bins)), 0.0, 0.0,
                          np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.uint64))
    return ShotArchive(header, config, batch)


def read_archive(path) -> ShotArchive:
    return decode(Path(path).read_bytes())
