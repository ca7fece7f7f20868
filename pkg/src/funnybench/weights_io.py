"""Versioned little-endian binary container for named tensors.

Layout (all integers little-endian):

    magic   8 bytes  b"FNBENCH1"
    version u32      container format version (currently 1)
    meta    u32 length + UTF-8 JSON blob (model metadata)
    count   u32      number of tensors
    tensor  repeated: u16 name length, name bytes, u8 dtype code,
            u8 ndim, ndim x u64 dims, raw tensor bytes

Dtype codes: 0 = float32, 1 = float64, 2 = int64, 3 = uint8.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FNBENCH1"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1"}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2, np.dtype("uint8"): 3}


class WeightsFormatError(ValueError):
    pass


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta_bytes)))
    chunks.append(meta_bytes)
    chunks.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            raise WeightsFormatError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise WeightsFormatError(f"{path}: not a tensor container (bad magic)")
    off = 8
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != VERSION:
        raise WeightsFormatError(f"{path}: unsupported container version {version}")
    (meta_len,) = struct.unpack_from("<I", data, off)
    off += 4
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        if code not in _DTYPES:
            raise WeightsFormatError(f"{path}: unknown dtype code {code}")
        dtype = np.dtype(_DTYPES[code])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        arr = np.frombuffer(data[off:off + n_bytes], dtype=dtype).reshape(shape)
        off += n_bytes
        tensors[name] = arr.copy()
    return tensors, meta
