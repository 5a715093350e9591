"""Little-endian binary I/O helpers shared by the model, corpus and network
file formats.  All multi-byte integers are unsigned little-endian; all float
arrays are little-endian float32."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(Exception):
    """A persisted file does not conform to its declared format."""


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


def read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(
            f"expected {n} bytes, file ended after {len(data)}")
    return data


def expect_magic(f: BinaryIO, magic: bytes) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise BadMagicError(f"bad magic {got!r}, expected {magic!r}")


def expect_version(f: BinaryIO, version: int) -> None:
    got = read_u32(f)
    if got != version:
        raise BadVersionError(f"unsupported version {got}, expected {version}")


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", read_exact(f, 4))[0]


def write_u64(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<Q", value))


def read_u64(f: BinaryIO) -> int:
    return struct.unpack("<Q", read_exact(f, 8))[0]


def write_f32_array(f: BinaryIO, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32_array(f: BinaryIO, count: int) -> np.ndarray:
    data = read_exact(f, 4 * count)
    return np.frombuffer(data, dtype="<f4").copy()
