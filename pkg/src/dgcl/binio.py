"""Low-level helpers for the little-endian binary containers.

Model checkpoints and memory dumps share one container: magic ``DGCL``,
a u32 format version, and a u32 payload kind. Dataset tensor files use the
fixed ``DGDS`` layout defined in :mod:`dgcl.datasets`.
"""
from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import BadMagicError, TruncatedFileError, VersionMismatchError

MAGIC_CONTAINER = b"DGCL"
CONTAINER_VERSION = 1
KIND_MODEL = 1
KIND_MEMORY = 2


def read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"file ended while reading {what} "
                                 f"(wanted {n} bytes, got {len(buf)})")
    return buf


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def read_u32(f: BinaryIO, what: str = "u32") -> int:
    return struct.unpack("<I", read_exact(f, 4, what))[0]


def write_f64_array(f: BinaryIO, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_f64_array(f: BinaryIO, shape: tuple[int, ...], what: str) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    buf = read_exact(f, count * 8, what)
    return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)


def write_container_header(f: BinaryIO, kind: int) -> None:
    f.write(MAGIC_CONTAINER)
    write_u32(f, CONTAINER_VERSION)
    write_u32(f, kind)


def read_container_header(f: BinaryIO, expect_kind: int) -> None:
    magic = read_exact(f, 4, "magic")
    if magic != MAGIC_CONTAINER:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC_CONTAINER!r}")
    version = read_u32(f, "format version")
    if version != CONTAINER_VERSION:
        raise VersionMismatchError(f"container version {version}, "
                                   f"reader supports {CONTAINER_VERSION}")
    kind = read_u32(f, "payload kind")
    if kind != expect_kind:
        raise VersionMismatchError(f"payload kind {kind}, expected {expect_kind}")
