"""Dense matrix/vector helpers on numpy arrays, plus the VKWT tensor container.

Matrices are 2-D row-major arrays, vectors 1-D.  Products always accumulate
in float64 regardless of the storage dtype.  Functions that accept a
leading batch axis say so explicitly.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

ACC = np.float64


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


def as_matrix(data, dtype=np.float64) -> np.ndarray:
    """Validate external input as a finite 2-D matrix (copy, C-contiguous)."""
    arr = np.array(data, dtype=dtype, order="C", copy=True)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains NaN or Inf")
    return arr


def as_vector(data, dtype=np.float64) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    if arr.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains NaN or Inf")
    return arr


def identity(n: int, dtype=np.float64) -> np.ndarray:
    return np.eye(n, dtype=dtype)


def matvec(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``M @ x``; ``x`` may carry leading batch axes (``(..., cols)``)."""
    if M.ndim != 2 or x.shape[-1] != M.shape[1]:
        raise ShapeError(f"matvec: matrix {M.shape} cannot multiply operand {x.shape}")
    return np.asarray(x, dtype=ACC) @ np.asarray(M, dtype=ACC).T


def matvec_t(M: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``M.T @ y``; ``y`` may carry leading batch axes (``(..., rows)``)."""
    if M.ndim != 2 or y.shape[-1] != M.shape[0]:
        raise ShapeError(f"matvec_t: matrix {M.shape} transposed cannot multiply {y.shape}")
    return np.asarray(y, dtype=ACC) @ np.asarray(M, dtype=ACC)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"hadamard: length mismatch {a.shape} vs {b.shape}")
    return np.multiply(a, b, dtype=ACC)


def outer_accumulate(acc: np.ndarray, y: np.ndarray, x: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Return ``acc + scale * y x^T``.

    With batched ``y`` (``(..., rows)``) and ``x`` (``(..., cols)``) the outer
    products are summed over the batch.  ``acc`` is not modified.
    """
    if acc.shape != (y.shape[-1], x.shape[-1]) or y.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"outer_accumulate: acc {acc.shape}, y {y.shape}, x {x.shape}")
    y2 = np.asarray(y, dtype=ACC).reshape(-1, y.shape[-1])
    x2 = np.asarray(x, dtype=ACC).reshape(-1, x.shape[-1])
    return np.asarray(acc, dtype=ACC) + scale * (y2.T @ x2)


def slice_rows(M: np.ndarray, k: int) -> np.ndarray:
    if not 1 <= k <= M.shape[0]:
        raise IndexError(f"slice_rows: k={k} outside [1, {M.shape[0]}]")
    return M[:k, :].copy()


def slice_cols(M: np.ndarray, k: int) -> np.ndarray:
    if not 1 <= k <= M.shape[1]:
        raise IndexError(f"slice_cols: k={k} outside [1, {M.shape[1]}]")
    return np.ascontiguousarray(M[:, :k])


# --- VKWT base-weight container -------------------------------------------------

VKWT_MAGIC = b"VKWT"
VKWT_VERSION = 1


class FormatError(ValueError):
    """A binary file has the wrong magic, version or an unknown enum value."""


class CorruptionError(ValueError):
    """A binary file ended early or carries inconsistent lengths."""


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise CorruptionError(f"truncated file: needed {n} bytes at offset {self.pos}")
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)

    def name(self) -> str:
        (length,) = self.unpack("<H")
        raw = self.take(length)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptionError(f"tensor name is not UTF-8 at offset {self.pos}") from exc

    def done(self) -> bool:
        return self.pos == len(self.buf)


def pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"name too long ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def write_tensors(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> int:
    """Write named 2-D tensors as little-endian float32; returns bytes written."""
    parts = [VKWT_MAGIC, struct.pack("<II", VKWT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ShapeError(f"tensor {name!r} is not 2-D: {arr.shape}")
        parts.append(pack_name(name))
        parts.append(struct.pack("<II", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def read_tensors(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read a VKWT file into an ordered ``{name: float32 matrix}`` dict."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != VKWT_MAGIC:
        raise FormatError("bad magic: not a VKWT tensor file")
    version, count = r.unpack("<II")
    if version != VKWT_VERSION:
        raise FormatError(f"unsupported VKWT version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.name()
        rows, cols = r.unpack("<II")
        if name in out:
            raise CorruptionError(f"duplicate tensor name {name!r}")
        out[name] = r.f32(rows * cols).reshape(rows, cols)
    if not r.done():
        raise CorruptionError("trailing bytes after last tensor")
    return out
