"""Binary checkpoint serialization.

Layout: magic "SHCK", version u32; then one record per named array:
name length u16, UTF-8 name, rank u8, one u32 extent per axis, payload
as little-endian float64 row-major. Records run to end of file, in map
order. Scalars are rank-0 records, which is how optimizer counters and
seeds ride along with parameters.
"""

import struct

import numpy as np

MAGIC = b"SHCK"
VERSION = 1


def save_checkpoint(path, entries):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in entries.items():
            arr = np.asarray(arr, dtype=np.float64)
            enc = name.encode("utf-8")
            if len(enc) > 0xFFFF:
                raise ValueError(f"entry name too long: {name!r}")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            for ext in arr.shape:
                f.write(struct.pack("<I", ext))
            f.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    entries = {}
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError("bad checkpoint magic")
        version = struct.unpack("<I", _read_exact(f, 4, "version"))[0]
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version: {version}")
        while True:
            head = f.read(2)
            if not head:
                break
            if len(head) != 2:
                raise ValueError("truncated checkpoint while reading name length")
            (nlen,) = struct.unpack("<H", head)
            name = _read_exact(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
            shape = tuple(
                struct.unpack("<I", _read_exact(f, 4, "extent"))[0] for _ in range(rank)
            )
            count = 1
            for ext in shape:
                count *= ext
            payload = _read_exact(f, count * 8, f"payload of {name!r}")
            arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
            if name in entries:
                raise ValueError(f"duplicate checkpoint entry: {name!r}")
            entries[name] = arr
    return entries
