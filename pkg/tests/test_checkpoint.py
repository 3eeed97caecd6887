import numpy as np
import pytest

from videoreid.autograd import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_is_bit_exact(tmp_path, rng):
    tensors = {
        "featnet.conv1.w": rng.standard_normal((4, 2, 3, 3)).astype(np.float32),
        "featnet.conv1.b": rng.standard_normal(4).astype(np.float32),
        "attn.temporal.theta": rng.standard_normal(16).astype(np.float32),
        "scalar": np.float32(rng.standard_normal()).reshape(()),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(tensors)
    for name, arr in tensors.items():
        assert loaded[name].shape == np.asarray(arr).shape
        assert np.array_equal(loaded[name].view(np.uint32), np.asarray(arr, dtype=np.float32).view(np.uint32))


def test_save_load_save_produces_identical_bytes(tmp_path, rng):
    tensors = {"a": rng.standard_normal((3, 5)).astype(np.float32), "b": rng.standard_normal(7).astype(np.float32)}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    save_checkpoint(p1, tensors)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_float64_values_are_stored_as_float32(tmp_path):
    save_checkpoint(tmp_path / "c.ckpt", {"x": np.array([1.0, 1.0 + 1e-12], dtype=np.float64)})
    loaded = load_checkpoint(tmp_path / "c.ckpt")["x"]
    assert loaded.dtype == np.float32
    assert loaded[0] == loaded[1]


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_truncated_file_rejected(tmp_path, rng):
    p = tmp_path / "t.ckpt"
    save_checkpoint(p, {"x": rng.standard_normal(64).astype(np.float32)})
    blob = p.read_bytes()
    p.write_bytes(blob[: len(blob) - 12])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)


def test_trailing_bytes_rejected(tmp_path, rng):
    p = tmp_path / "t.ckpt"
    save_checkpoint(p, {"x": rng.standard_normal(8).astype(np.float32)})
    p.write_bytes(p.read_bytes() + b"extra")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(p)
