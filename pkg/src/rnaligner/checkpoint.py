"""Bit-exact checkpoint files.

Layout (all integers little-endian):

    magic "RNAC" | u32 version=1 | u32 json_len | config JSON (sorted keys)
    | u64 step | u32 n_tensors | tensor records

Each tensor record: u16 name length, UTF-8 name, u8 dtype code (0=float64,
1=float32), u8 ndim, u32 per dim, then the raw little-endian payload.
Loading reproduces every value bit-exactly; a version mismatch is an error,
never a silent migration.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"RNAC"
VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


def save_checkpoint(path, config_dict, step, arrays):
    payload = [MAGIC]
    blob = json.dumps(config_dict, sort_keys=True).encode("utf-8")
    payload.append(struct.pack("<II", VERSION, len(blob)))
    payload.append(blob)
    payload.append(struct.pack("<QI", step, len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype not in _CODES:
            arr = arr.astype(np.float64)
        encoded = name.encode("utf-8")
        payload.append(struct.pack("<H", len(encoded)))
        payload.append(encoded)
        payload.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        payload.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(payload))


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"{self.path}: truncated while reading {what} at byte {self.pos}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path):
    """Returns (config dict, step, {name: array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    version, json_len = r.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(
            f"{path}: checkpoint version {version}, this build reads {VERSION}")
    try:
        config = json.loads(r.take(json_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad config block: {exc}") from None
    step, count = r.unpack("<QI", "counters")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name")
        name = r.take(name_len, "tensor name").decode("utf-8")
        code, ndim = r.unpack("<BB", "tensor header")
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code} for {name}")
        shape = r.unpack(f"<{ndim}I", "tensor shape")
        dtype = _DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        data = np.frombuffer(r.take(n_bytes, f"tensor {name}"), dtype=dtype)
        arrays[name] = data.reshape(shape).copy()
    return config, step, arrays
