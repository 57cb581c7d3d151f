"""Single-file parameter archives.

Layout (all little-endian)::

    magic  b"FSCK"  | u32 version | u32 count
    count x [u16 name_len | name utf-8 | u8 dtype code | u8 ndim | ndim x u32 | raw values]
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FSCK"
VERSION = 1
_CODES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "<u1"}
_BY_DTYPE = {np.dtype(v): k for k, v in _CODES.items()}


def save_checkpoint(path, arrays):
    """Write ``name -> array`` in sorted name order (so bytes are reproducible)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name])
            key = np.dtype(arr.dtype).newbyteorder("<")
            if key not in _BY_DTYPE:
                raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<BB", _BY_DTYPE[key], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=key).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + n].decode()
        off += n
        code, ndim = struct.unpack_from("<BB", buf, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        dt = np.dtype(_CODES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(buf, dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
        off += nbytes
    return out
