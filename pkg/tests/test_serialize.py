"""Tensor-file format checks: roundtrips, corruption, atomicity."""

import os
import struct

import numpy as np
import pytest

from texsyn import serialize
from texsyn.serialize import WeightFormatError, load_tensors, save_tensors


def sample_tensors():
    g = np.random.default_rng(7)
    return {
        "alpha": g.standard_normal((3, 4)).astype(np.float32),
        "beta.kernel": g.standard_normal((2, 3, 3, 3)).astype(np.float32),
        "gamma": np.float32(2.5).reshape(()),  # rank 0
        "delta": g.standard_normal(7).astype(np.float32),
    }


def test_roundtrip_bit_exact(tmp_path):
    path = str(tmp_path / "w.bin")
    tensors = sample_tensors()
    save_tensors(path, tensors)
    loaded = load_tensors(path)
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert loaded[name].dtype == np.float32
        assert loaded[name].shape == np.asarray(tensors[name]).shape
        np.testing.assert_array_equal(loaded[name], tensors[name])


def test_file_size_is_header_plus_payload(tmp_path):
    path = str(tmp_path / "w.bin")
    tensors = sample_tensors()
    save_tensors(path, tensors)
    expected = 4 + 8  # magic + version/count
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        expected += 2 + len(name) + 1 + 4 * arr.ndim + 4 * arr.size
    assert os.path.getsize(path) == expected


def test_corrupt_magic_rejected(tmp_path):
    path = str(tmp_path / "w.bin")
    save_tensors(path, sample_tensors())
    blob = bytearray(open(path, "rb").read())
    blob[:4] = b"XXXX"
    open(path, "wb").write(bytes(blob))
    with pytest.raises(WeightFormatError, match="magic"):
        load_tensors(path)


def test_truncated_file_reports_offset(tmp_path):
    path = str(tmp_path / "w.bin")
    save_tensors(path, sample_tensors())
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[: len(blob) - 5])
    with pytest.raises(WeightFormatError, match="offset"):
        load_tensors(path)


def test_trailing_garbage_rejected(tmp_path):
    path = str(tmp_path / "w.bin")
    save_tensors(path, sample_tensors())
    with open(path, "ab") as f:
        f.write(b"\x00\x01")
    with pytest.raises(WeightFormatError, match="trailing"):
        load_tensors(path)


def test_unsupported_version_rejected(tmp_path):
    path = str(tmp_path / "w.bin")
    save_tensors(path, {})
    blob = bytearray(open(path, "rb").read())
    blob[4:8] = struct.pack("<I", 99)
    open(path, "wb").write(bytes(blob))
    with pytest.raises(WeightFormatError, match="version"):
        load_tensors(path)


def test_write_is_atomic_no_partial_on_failure(tmp_path, monkeypatch):
    path = str(tmp_path / "w.bin")
    save_tensors(path, {"a": np.zeros(3, dtype=np.float32)})
    original = open(path, "rb").read()

    def boom(src, dst):
        raise OSError("simulated rename failure")

    monkeypatch.setattr(serialize.os, "replace", boom)
    with pytest.raises(OSError):
        save_tensors(path, {"b": np.ones(5, dtype=np.float32)})
    # destination untouched, no temp files left behind
    assert open(path, "rb").read() == original
    assert [p.name for p in tmp_path.iterdir()] == ["w.bin"]


def test_empty_mapping_roundtrips(tmp_path):
    path = str(tmp_path / "w.bin")
    save_tensors(path, {})
    assert load_tensors(path) == {}
