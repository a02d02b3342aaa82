"""Checkpoint file format: bit-exact round trips, manifest integrity."""

import numpy as np
import pytest

from mtss.diffnum import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "embed": rng.normal(size=(7, 3)),
        "w": rng.normal(size=(4, 4)),
        "b": rng.normal(size=4),
        "scalarish": np.array(3.14159),
    }
    meta = {"kind": "teacher", "config_hash": "abc123", "domain": "hotel"}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == set(tensors)
    for name, arr in tensors.items():
        assert loaded[name].shape == arr.shape
        assert loaded[name].tobytes() == np.ascontiguousarray(arr).tobytes()


def test_same_content_writes_identical_files(tmp_path):
    tensors = {"w": np.arange(6.0).reshape(2, 3)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, tensors, {"kind": "student"})
    save_checkpoint(p2, tensors, {"kind": "student"})
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_truncated_data_rejected(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": np.ones((10, 10))}, {})
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
