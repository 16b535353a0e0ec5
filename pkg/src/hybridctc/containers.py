"""Binary container for dense float64 matrices.

One format serves both posterior lattices and feature matrices. Layout,
all integers little-endian uint32:

    magic (4 bytes) | version | rows | cols | aux | rows*cols float64 (LE, row-major)

``aux`` carries the blank token id for lattices and is zero for plain
feature matrices. The payload is raw IEEE-754 doubles, so save/load
round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

CONTAINER_VERSION = 1

LATTICE_MAGIC = b"LATT"
FEATURE_MAGIC = b"FEAT"

_HEADER = struct.Struct("<4sIIII")


class ContainerError(ValueError):
    """Raised for malformed, truncated, or mismatched container files."""


def write_matrix(path: str | Path, values: np.ndarray, magic: bytes, aux: int = 0) -> None:
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ContainerError(f"expected a 2-D matrix, got shape {values.shape}")
    rows, cols = values.shape
    header = _HEADER.pack(magic, CONTAINER_VERSION, rows, cols, aux)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.astype("<f8", copy=False).tobytes())


def read_matrix(path: str | Path, magic: bytes) -> tuple[np.ndarray, int]:
    """Read a matrix container, returning ``(values, aux)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ContainerError(f"{path}: truncated header ({len(raw)} bytes)")
    got_magic, version, rows, cols, aux = _HEADER.unpack_from(raw)
    if got_magic != magic:
        raise ContainerError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != CONTAINER_VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + rows * cols * 8
    if len(raw) != expected:
        raise ContainerError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    return values.astype(np.float64), aux
