import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis.extra.numpy import array_shapes, arrays

from conflow.io import (
    BadMagic,
    DtypeMismatch,
    Truncated,
    config_hash,
    decode_tensor,
    encode_tensor,
    read_csv,
    read_tensor,
    rows_to_csv,
    write_tensor,
)


@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, max_side=5)))
def test_round_trip_is_bitwise(t):
    back = decode_tensor(encode_tensor(t))
    assert back.shape == t.shape
    assert back.tobytes() == np.ascontiguousarray(t).tobytes()


def test_file_round_trip(tmp_path):
    t = np.random.default_rng(0).normal(size=(3, 4, 2))
    write_tensor(tmp_path / "t.ncf", t)
    assert np.array_equal(read_tensor(tmp_path / "t.ncf"), t)


def test_header_layout():
    buf = encode_tensor(np.zeros((2, 3)))
    assert buf[:4] == b"NCF1"
    assert struct.unpack_from("<HHI2I", buf, 4) == (1, 0, 2, 2, 3)
    assert len(buf) == 4 + 8 + 8 + 6 * 8


def test_bad_magic():
    buf = bytearray(encode_tensor(np.ones(2)))
    buf[:4] = b"XXXX"
    with pytest.raises(BadMagic) as info:
        decode_tensor(bytes(buf))
    assert info.value.code == "bad_magic"


def test_truncated_payload():
    with pytest.raises(Truncated) as info:
        decode_tensor(encode_tensor(np.ones((2, 2)))[:-8])
    assert info.value.code == "truncated"


def test_dtype_mismatch():
    buf = bytearray(encode_tensor(np.ones(2)))
    struct.pack_into("<H", buf, 6, 3)
    with pytest.raises(DtypeMismatch) as info:
        decode_tensor(bytes(buf))
    assert info.value.code == "dtype_mismatch"


def test_error_codes_are_distinct():
    assert len({BadMagic.code, Truncated.code, DtypeMismatch.code}) == 3


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_csv_carries_hash_and_seed(tmp_path):
    text = rows_to_csv([{"x": 0.1, "ok": True}, {"x": 1e-7, "ok": False}], {"k": 1}, 42)
    path = tmp_path / "r.csv"
    path.write_text(text)
    rows = read_csv(path)
    assert rows[0]["config_hash"] == config_hash({"k": 1}) and rows[0]["seed"] == "42"
    assert float(rows[1]["x"]) == 1e-7 and rows[0]["ok"] == "true"


def test_csv_needs_rows():
    with pytest.raises(ValueError):
        rows_to_csv([], {}, 0)
