"""Named-tensor checkpoint container.

Binary layout: magic ``FVGC``, u32-LE format version, u32-LE tensor count,
then per tensor: u32-LE name length, UTF-8 name, u32-LE rank, u64-LE extents,
raw little-endian float64 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ImageFormatError

MAGIC = b"FVGC"
VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    chunks: list[bytes] = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        # ascontiguousarray would promote rank-0 arrays to rank 1
        a = np.asarray(arr, dtype=np.float64, order="C")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}Q", *a.shape) if a.ndim else b"")
        chunks.append(a.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ImageFormatError(f"{path}: not a FVGC checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ImageFormatError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", raw, off) if rank else ()
            off += 8 * rank
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape)
            off += 8 * n
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ImageFormatError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(raw):
        raise ImageFormatError(f"{path}: trailing bytes after checkpoint payload")
    return out
