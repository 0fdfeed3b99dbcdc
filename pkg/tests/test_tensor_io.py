"""Binary tensor container: round-trips, quantization, and corruption handling."""

import os
import struct

import numpy as np
import pytest

from flaming.numerics import (
    MAGIC,
    TensorIOError,
    f32_quantize,
    load_named_tensors,
    read_tensor,
    save_named_tensors,
    write_tensor,
)


def test_round_trip_preserves_quantized_values(tmp_path, rng):
    arr = rng.standard_normal((3, 4, 5))
    p = str(tmp_path / "a.flmt")
    write_tensor(p, arr)
    back = read_tensor(p)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, f32_quantize(arr))


def test_f32_quantize_idempotent(rng):
    arr = rng.standard_normal(100)
    q = f32_quantize(arr)
    np.testing.assert_array_equal(q, f32_quantize(q))
    # quantization error bounded by single-precision ulp
    assert np.max(np.abs(q - arr)) < 1e-6


def test_zero_dim_and_empty_tensors(tmp_path):
    for arr in (np.array(3.14), np.zeros((0, 4))):
        p = str(tmp_path / "t.flmt")
        write_tensor(p, arr)
        back = read_tensor(p)
        assert back.shape == arr.shape


def test_file_starts_with_magic(tmp_path):
    p = str(tmp_path / "m.flmt")
    write_tensor(p, np.ones(2))
    with open(p, "rb") as fh:
        head = fh.read(len(MAGIC))
    assert head == MAGIC


def test_read_missing_file_raises():
    with pytest.raises(TensorIOError):
        read_tensor("/nonexistent/path/t.flmt")


def test_read_wrong_magic_raises(tmp_path):
    p = str(tmp_path / "bad.flmt")
    with open(p, "wb") as fh:
        fh.write(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(TensorIOError):
        read_tensor(p)


def test_read_truncated_payload_raises(tmp_path):
    p = str(tmp_path / "trunc.flmt")
    write_tensor(p, np.ones((10, 10)))
    size = os.path.getsize(p)
    with open(p, "r+b") as fh:
        fh.truncate(size - 17)
    with pytest.raises(TensorIOError):
        read_tensor(p)


def test_named_tensors_round_trip(tmp_path, rng):
    tensors = {
        "encoder.w": rng.standard_normal((4, 4)),
        "head.bias": np.zeros(3),
        "scalar": np.array(1.5),
    }
    d = str(tmp_path / "params")
    save_named_tensors(d, tensors)
    back = load_named_tensors(d)
    assert set(back) == set(tensors)
    for k, v in tensors.items():
        np.testing.assert_array_equal(back[k], f32_quantize(v))


def test_load_named_tensors_missing_dir_raises():
    with pytest.raises(TensorIOError):
        load_named_tensors("/nonexistent/params/dir")
