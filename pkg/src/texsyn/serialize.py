"""Flat binary tensor files.

Layout (all integers little-endian):

    magic    4 bytes  b"TXW1"
    version  u32      format version, currently 1
    count    u32      number of tensors
    then per tensor:
      name_len  u16
      name      name_len bytes, UTF-8
      rank      u8
      dims      rank x u32
      data      prod(dims) x f32, C order

Writes are atomic: data goes to a temporary file in the target directory
which is renamed over the destination only once fully written.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"TXW1"
VERSION = 1


class WeightFormatError(ValueError):
    """The file does not conform to the tensor-file layout."""


def save_tensors(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays to ``path`` atomically."""
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<II", VERSION, len(tensors))
    for name, array in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise WeightFormatError(f"tensor name too long: {len(raw)} bytes")
        arr = np.asarray(array, dtype=np.float32)
        payload += struct.pack("<H", len(raw))
        payload += raw
        payload += struct.pack("<B", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += arr.tobytes()
    atomic_write_bytes(path, bytes(payload))


def load_tensors(path: str) -> dict[str, np.ndarray]:
    """Read a tensor file back into {name: float32 array}."""
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise WeightFormatError(
                f"truncated file: need {n} bytes for {what} at offset {off}, "
                f"have {len(blob) - off}"
            )
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise WeightFormatError(f"bad magic bytes, expected {MAGIC!r}")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise WeightFormatError(f"unsupported format version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = take(4 * n_items, f"data of '{name}'")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
    if off != len(blob):
        raise WeightFormatError(f"{len(blob) - off} trailing bytes at offset {off}")
    return tensors


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
