"""Tests for the JSON-lines shot archive."""

import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmit.archive import (
    ArchiveError,
    ChecksumError,
    VersionError,
    decode,
    encode,
    read_archive,
    write_archive,
)
from qmit.config import RunConfig, preset
from qmit.simulator import simulate_batch
from qmit.spin_dynamics import spin_temperature


def make(n=20, seed=3, cfg=None):
    cfg = cfg or RunConfig.default().replace(seed=seed)
    return simulate_batch(cfg.simulation_params(), n, seed), cfg


def rewrite_header(data: bytes, **fields) -> bytes:
    head, _, body = data.partition(b"\n")
    header = json.loads(head)
    header.update(fields)
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n" + body


ENCODED = encode(*make())
HEADER_LEN = ENCODED.index(b"\n") + 1


class TestRoundTrip:
    @pytest.mark.parametrize("n", [1, 20])
    def test_bit_exact(self, tmp_path, n):
        batch, cfg = make(n)
        back = read_archive(write_archive(tmp_path / "a" / "s.jsonl", batch, cfg))
        assert len(back) == n
        assert back.config == cfg
        for name in ("q_a", "q_b_bins", "rf_phase", "position", "index", "seed"):
            np.testing.assert_array_equal(getattr(back.batch, name), getattr(batch, name))
        assert back.populations == spin_temperature(0.975)

    def test_rf_records(self):
        cfg = preset("mit")
        batch = simulate_batch(cfg.simulation_params(), 5, 1)
        back = decode(encode(batch, cfg))
        np.testing.assert_array_equal(back.batch.q_b, batch.q_b)

    def test_encoding_is_deterministic(self):
        assert encode(*make()) == ENCODED

    def test_headers_differ_only_by_seed(self):
        a = json.loads(encode(*make(seed=1)).split(b"\n")[0])
        b = json.loads(encode(*make(seed=2)).split(b"\n")[0])
        diff = {k for k in a if a[k] != b[k]}
        assert diff == {"config", "config_sha256", "records_sha256"}
        assert {k for k in a["config"] if a["config"][k] != b["config"][k]} == {"seed"}


class TestCorruption:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(HEADER_LEN, len(ENCODED) - 2), st.integers(1, 255))
    def test_any_record_byte_change_is_detected(self, pos, delta):
        data = bytearray(ENCODED)
        data[pos] = (data[pos] + delta) % 256
        with pytest.raises(ArchiveError):
            decode(bytes(data))

    def test_checksum_error_type(self):
        data = bytearray(ENCODED)
        data[HEADER_LEN + 5] ^= 1
        with pytest.raises(ChecksumError):
            decode(bytes(data))

    def test_truncated_archive(self):
        with pytest.raises(ChecksumError):
            decode(ENCODED[:-10])

    def test_config_tampering(self):
        head = json.loads(ENCODED.split(b"\n")[0])
        cfg = dict(head["config"], seed=99)
        with pytest.raises(ChecksumError, match="configuration"):
            decode(rewrite_header(ENCODED, config=cfg))

    def test_version(self):
        with pytest.raises(VersionError):
            decode(rewrite_header(ENCODED, version=2))

    def test_count_mismatch(self):
        with pytest.raises(ArchiveError, match="declared 21"):
            decode(rewrite_header(ENCODED, n_records=21))

    def test_bin_mismatch(self):
        with pytest.raises(ArchiveError, match="bin count"):
            decode(rewrite_header(ENCODED, n_bins_b=3))

    @pytest.mark.parametrize("data", [b"", b"not json\n", b'{"format": "x"}\n'])
    def test_not_an_archive(self, data):
        with pytest.raises(ArchiveError):
            decode(data)

    def test_empty_record_section(self):
        body = b""
        data = rewrite_header(ENCODED, n_records=0,
                              records_sha256=hashlib.sha256(body).hexdigest())
        data = data[:data.index(b"\n") + 1]
        assert len(decode(data)) == 0
