"""Binary checkpoint format for named parameter tensors.

Layout: magic bytes b"IVTC", version u16 LE, then one record per
parameter in insertion order: name length (u32 LE), UTF-8 name,
shape rank (u32 LE), dims (u64 LE each), row-major f64 LE payload.
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"IVTC"
VERSION = 1


def save_params(path, params: dict[str, Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        for name, t in params.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", t.ndim))
            for d in t.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(t.data.astype("<f8", copy=False).tobytes())


def load_params(path) -> dict[str, Tensor]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 6
    params: dict[str, Tensor] = {}
    while pos < len(raw):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", raw, pos) if rank else ()
        pos += 8 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        params[name] = Tensor(data.copy(), requires_grad=True)
    return params
