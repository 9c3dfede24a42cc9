"""Sampled scalar and symmetric-tensor fields with CSV / binary round trips."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import PreconditionError

MAGIC = b"CYL-FIELD-v1\x00\x00\x00\x00"  # 16-byte header of the binary dump


@dataclass
class ScalarField:
    grid: object
    values: np.ndarray
    callback: Optional[Callable] = None  # closed-form off-node evaluator

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise PreconditionError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    def copy(self):
        return ScalarField(self.grid, self.values.copy(), self.callback)

    def __call__(self, x):
        if self.callback is None:
            raise PreconditionError("no closed-form callback attached")
        return self.callback(np.asarray(x))


@dataclass
class TensorField:
    """Symmetric 2-tensor sampled nodewise; values shape = grid.shape + (n, n)."""

    grid: object
    values: np.ndarray
    callback: Optional[Callable] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.grid.n
        if self.values.shape != self.grid.shape + (n, n):
            raise PreconditionError("tensor values must have shape grid.shape + (n, n)")
        sym_err = np.max(np.abs(self.values - np.swapaxes(self.values, -1, -2)))
        if sym_err > 1e-12:
            raise PreconditionError(f"tensor not symmetric (max asym {sym_err:.2e})")

    def copy(self):
        return TensorField(self.grid, self.values.copy(), self.callback)

    def component(self, i, j) -> np.ndarray:
        return self.values[..., i, j]


def constant_scalar(grid, value: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, float(value)),
                       callback=lambda x, v=float(value): np.full(np.shape(x)[:-1], v))


def identity_tensor(grid) -> TensorField:
    n = grid.n
    vals = np.zeros(grid.shape + (n, n))
    for i in range(n):
        vals[..., i, i] = 1.0
    return TensorField(grid, vals)


def from_callback(grid, fn: Callable, tensor: bool = False):
    x = grid.coords()
    vals = fn(x)
    if tensor:
        return TensorField(grid, vals, callback=fn)
    return ScalarField(grid, np.asarray(vals, dtype=float), callback=fn)


# ---------------------------------------------------------------------------
# serialization


def field_to_csv(field, stream=None) -> str:
    """One row per node: index tuple, coordinates, components (RFC 4180)."""
    own = stream is None
    if own:
        stream = io.StringIO()
    w = csv.writer(stream, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    grid = field.grid
    n = grid.n
    ncomp = 1 if field.values.ndim == n else n * n
    header = [f"i{k}" for k in range(n)] + [f"x{k}" for k in range(n)]
    if ncomp == 1:
        header += ["value"]
    else:
        header += [f"c{i}{j}" for i in range(n) for j in range(n)]
    w.writerow(header)
    coords = grid.coords().reshape(-1, n)
    vals = field.values.reshape(-1, ncomp)
    for flat, (idx, x, v) in enumerate(
            zip(np.ndindex(grid.shape), coords, vals)):
        w.writerow([*idx, *(repr(c) for c in x), *(repr(c) for c in v)])
    return stream.getvalue() if own else ""


def field_to_bytes(field) -> bytes:
    """Binary dump: 16-byte magic, rank, n, dims, then raw little-endian f64."""
    grid = field.grid
    rank = 0 if field.values.ndim == grid.n else 2
    head = struct.pack("<II", rank, grid.n)
    head += struct.pack(f"<{grid.n}I", *grid.shape)
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    return MAGIC + head + payload


def field_values_from_bytes(blob: bytes):
    """Inverse of field_to_bytes up to grid metadata: returns (rank, dims, array)."""
    if blob[:16] != MAGIC:
        raise PreconditionError("bad magic header")
    rank, n = struct.unpack_from("<II", blob, 16)
    dims = struct.unpack_from(f"<{n}I", blob, 24)
    off = 24 + 4 * n
    arr = np.frombuffer(blob, dtype="<f8", offset=off).copy()
    shape = tuple(dims) + ((n, n) if rank == 2 else ())
    return rank, dims, arr.reshape(shape)
