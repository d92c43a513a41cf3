"""Binary tensor files, JSON configs and CSV tables.

Tensor layout (little-endian)::

    b"NCF1" | u16 version | u16 dtype (0 = f64) | u32 ndim | u32 dims[ndim] | f64 payload
"""

import csv
import hashlib
import io
import json
import struct

import numpy as np

MAGIC = b"NCF1"
VERSION = 1
DTYPE_F64 = 0


class TensorFileError(ValueError):
    code = "tensor_error"


class BadMagic(TensorFileError):
    code = "bad_magic"


class Truncated(TensorFileError):
    code = "truncated"


class DtypeMismatch(TensorFileError):
    code = "dtype_mismatch"


def encode_tensor(t):
    t = np.asarray(t, dtype="<f8")
    head = MAGIC + struct.pack("<HHI", VERSION, DTYPE_F64, t.ndim)
    head += struct.pack(f"<{t.ndim}I", *t.shape)
    return head + t.tobytes(order="C")


def decode_tensor(buf):
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not a tensor file")
    if len(buf) < 12:
        raise Truncated("header is truncated")
    _version, dtype, ndim = struct.unpack_from("<HHI", buf, 4)
    if dtype != DTYPE_F64:
        raise DtypeMismatch(f"unsupported dtype code {dtype}")
    end = 12 + 4 * ndim
    if len(buf) < end:
        raise Truncated("dimension table is truncated")
    dims = struct.unpack_from(f"<{ndim}I", buf, 12)
    size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(buf) - end != 8 * size:
        raise Truncated(f"payload has {len(buf) - end} bytes, expected {8 * size}")
    return np.frombuffer(buf, dtype="<f8", offset=end).reshape(dims).astype(np.float64)


def write_tensor(path, t):
    with open(path, "wb") as f:
        f.write(encode_tensor(t))


def read_tensor(path):
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def load_config(path):
    with open(path) as f:
        return json.load(f)


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, config, seed):
    """CSV text with ``config_hash`` and ``seed`` columns on every row."""
    if not rows:
        raise ValueError("no rows to write")
    h = config_hash(config)
    fields = ["config_hash", "seed"] + list(rows[0].keys())
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([h, seed] + [_fmt(r[k]) for k in fields[2:]])
    return out.getvalue()


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
