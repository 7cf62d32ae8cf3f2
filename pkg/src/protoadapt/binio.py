"""Low-level readers/writers for the toolkit's binary matrix formats.

Every format shares one layout: a 4-byte ASCII magic, two 32-bit
little-endian unsigned counts (rows, cols), then a row-major payload.
Float payloads are 32-bit IEEE-754 little-endian; integer payloads are
32-bit unsigned little-endian.  Values are promoted to float64/int64 on
load so downstream accumulations have headroom.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import BadMagic, NonFiniteValue, TruncatedFile

_HEADER = struct.Struct("<4sII")


def write_matrix(path, magic: str, data: np.ndarray, kind: str = "f4") -> None:
    """Write a 2-D array under the shared header layout.

    ``kind`` is the payload element type: ``"f4"`` or ``"u4"``.
    """
    arr = np.ascontiguousarray(data)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D array, got shape {arr.shape}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic.encode("ascii"), rows, cols))
        fh.write(arr.astype(f"<{kind}").tobytes())


def read_matrix(path, magic: str, kind: str = "f4",
                check_finite: bool = True) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix`.

    Returns float64 for ``"f4"`` payloads and int64 for ``"u4"``.
    Raises ``BadMagic``, ``TruncatedFile``, or ``NonFiniteValue``.
    """
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise BadMagic(f"{path}: file too short for a header")
        got_magic, rows, cols = _HEADER.unpack(header)
        if got_magic != magic.encode("ascii"):
            raise BadMagic(f"{path}: expected magic {magic!r}, found {got_magic!r}")
        payload = fh.read()
    expected = rows * cols * 4
    if len(payload) != expected:
        raise TruncatedFile(
            f"{path}: header declares {rows}x{cols} ({expected} payload bytes), "
            f"found {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype=f"<{kind}")
    out = flat.astype(np.float64 if kind == "f4" else np.int64).reshape(rows, cols)
    if check_finite and kind == "f4" and not np.isfinite(out).all():
        raise NonFiniteValue(f"{path}: payload contains NaN or Inf")
    out.setflags(write=False)
    return out
