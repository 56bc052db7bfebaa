"""Self-describing binary checkpoints.

Layout (all integers little-endian uint32):
    magic "BDLB" | version | config digest (32 raw sha256 bytes) |
    param count | records...
Each record: name length | name utf-8 | shape rank | dims... |
float32 little-endian values in C order.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"BDLB"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_digest(config_fields: dict) -> bytes:
    canon = json.dumps(config_fields, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).digest()


def save_checkpoint(path: str, arrays: dict[str, np.ndarray],
                    digest: bytes) -> None:
    if len(digest) != 32:
        raise CheckpointError("digest must be 32 bytes")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(digest)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError(f"{path}: bad magic {bytes(view[:4])!r}")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    digest = bytes(view[8:40])
    (count,) = struct.unpack_from("<I", view, 40)
    off = 44
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", view, off)
        off += 4
        name = bytes(view[off:off + name_len]).decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", view, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", view, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(view, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        arrays[name] = np.array(arr)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return arrays, digest
