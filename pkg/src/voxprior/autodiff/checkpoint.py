"""Versioned binary container for named parameter tensors.

Layout (all integers little-endian):
  magic "ADP1" | uint32 version | uint32 meta_len | meta (UTF-8 JSON)
  uint32 n_tensors, then per tensor:
    uint16 name_len | name | uint8 dtype (0=f32, 1=f64) | uint8 ndim
    ndim * uint32 dims | raw little-endian payload
"""

import json
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"ADP1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def save_tensors(path, tensors, meta=None):
    """Write an ordered {name: ndarray} mapping plus a JSON metadata dict."""
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", 1, len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):  # canonical order: byte-stable output
            arr = tensors[name]
            arr = np.asarray(arr)
            if arr.dtype not in _CODES:
                raise ValueError("unsupported dtype %r for tensor %r" % (arr.dtype, name))
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            f.write(struct.pack("<%dI" % arr.ndim, *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("truncated file while reading %s at offset %d" % (what, f.tell() - len(buf)))
    return buf


def load_tensors(path):
    """Read back ({name: ndarray}, meta dict)."""
    with open(path, "rb") as f:
        magic = _read(f, 4, "magic")
        if magic != MAGIC:
            raise FormatError("bad magic %r at offset 0, expected %r" % (magic, MAGIC))
        version, meta_len = struct.unpack("<II", _read(f, 8, "header"))
        if version != 1:
            raise FormatError("unsupported version %d at offset 4" % version)
        meta = json.loads(_read(f, meta_len, "metadata").decode("utf-8"))
        (count,) = struct.unpack("<I", _read(f, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(f, 2, "name length"))
            name = _read(f, name_len, "name").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read(f, 2, "dtype/ndim"))
            if code not in _DTYPES:
                raise FormatError("unknown dtype code %d at offset %d" % (code, f.tell() - 2))
            dims = struct.unpack("<%dI" % ndim, _read(f, 4 * ndim, "dims"))
            dtype = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            payload = _read(f, nbytes, "payload of %r" % name)
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
        return tensors, meta
