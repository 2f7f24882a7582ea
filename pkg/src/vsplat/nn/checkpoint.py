"""Binary checkpoint container.

Layout (all integers little-endian):
    magic   4 bytes  b"ELF1"
    version u32      currently 1
    count   u32      number of records
    record: u32 name length | name utf-8 | u8 dtype code | u8 ndim |
            u32 x ndim extents | raw little-endian buffer

dtype codes: 0 = float32, 1 = float64, 2 = int32, 3 = int64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, MissingFile

MAGIC = b"ELF1"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i4", 3: "<i8"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def save_checkpoint(path, arrays: dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            code = _CODES.get(np.dtype(arr.dtype.newbyteorder("<")))
            if code is None:
                raise DataError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(_DTYPES[code], copy=False).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    off = 12
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        dt = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if ndim else dt.itemsize
        arr = np.frombuffer(data, dtype=dt, count=max(int(np.prod(shape)) if ndim else 1, 0), offset=off)
        off += nbytes
        out[name] = arr.reshape(shape).copy()
    return out
