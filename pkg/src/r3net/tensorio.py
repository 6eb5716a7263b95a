"""Binary tensor wire format.

Each record is::

    b"R3T1" | rank: u32 | extents: rank x u64 | name_len: u32 | name: UTF-8 | payload: f64[prod(extents)]

All integers and floats are little-endian.  Files are plain concatenations of
records.
"""
from __future__ import annotations

import struct
from typing import BinaryIO, Iterator

import numpy as np

MAGIC = b"R3T1"


class FormatError(ValueError):
    """A byte stream does not follow the tensor wire format."""


def write_tensor(fh: BinaryIO, name: str, array: np.ndarray) -> None:
    array = np.asarray(array, dtype="<f8")
    encoded = name.encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(array.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated tensor record: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> tuple[str, np.ndarray] | None:
    """Read one record, or return None at a clean end of stream."""
    magic = fh.read(4)
    if not magic:
        return None
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode("utf-8")
    count = int(np.prod(shape)) if rank else 1
    payload = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
    return name, payload.reshape(shape).astype(np.float64)


def iter_tensors(fh: BinaryIO) -> Iterator[tuple[str, np.ndarray]]:
    while (record := read_tensor(fh)) is not None:
        yield record


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for name, array in tensors.items():
            write_tensor(fh, name, array)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return dict(iter_tensors(fh))
