"""DLAT binary tensor files and the weights manifest.

Layout: b"DLAT", u16 version (1), u8 dtype (0=f64, 1=f32, 2=f16), u8 ndim,
ndim x u32 dims, then the little-endian row-major payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from dlasim.errors import DlaError

MAGIC = b"DLAT"
VERSION = 1
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<f2")}
DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1, np.dtype(np.float16): 2}


class DlatFormatError(DlaError, ValueError):
    pass


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = DTYPE_CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise DlatFormatError(f"unsupported dtype {arr.dtype}")
    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise DlatFormatError("bad magic")
    if len(buf) < 8:
        raise DlatFormatError("truncated header")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise DlatFormatError(f"unsupported version {version}")
    if code not in DTYPES:
        raise DlatFormatError(f"unknown dtype code {code}")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    offset = 8 + 4 * ndim
    dtype = DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - offset != count * dtype.itemsize:
        raise DlatFormatError(f"payload is {len(buf) - offset} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(buf, dtype=dtype, offset=offset).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode(arr))


def read_tensor(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def save_weights(weights: dict, directory, dtype=np.float64) -> Path:
    """Write one DLAT per parameter plus manifest.json; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, (w, b) in weights.items():
        entry = {}
        for role, arr in (("weights", w), ("bias", b)):
            fname = f"{name}_{role}.dlat"
            write_tensor(directory / fname, np.asarray(arr, dtype=dtype))
            entry[role] = fname
        manifest[name] = entry
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_weights(manifest_path) -> dict:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    return {
        name: (read_tensor(base / entry["weights"]), read_tensor(base / entry["bias"]))
        for name, entry in manifest.items()
    }
