"""Second-order finite-difference stencils on structured grids.

Interior nodes use centered differences.  Periodic grids wrap; chart grids
fall back to one-sided second-order stencils on the cube faces.
"""

from __future__ import annotations

import numpy as np

from ..errors import PreconditionError
from .fields import ScalarField, TensorField


def _diff_axis_periodic(v: np.ndarray, axis: int, order: int, h: float) -> np.ndarray:
    if order == 1:
        return (np.roll(v, -1, axis) - np.roll(v, 1, axis)) / (2.0 * h)
    return (np.roll(v, -1, axis) - 2.0 * v + np.roll(v, 1, axis)) / (h * h)


def _diff_axis_bounded(v: np.ndarray, axis: int, order: int, h: float) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    if order == 1:
        out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    else:
        out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h)
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / (h * h)
    return np.moveaxis(out, 0, axis)


def diff_array(v: np.ndarray, grid, axis: int, order: int = 1) -> np.ndarray:
    """Finite difference of a raw node array along a grid axis."""
    if not (0 <= axis < grid.n):
        raise PreconditionError(f"axis {axis} out of range for n = {grid.n}")
    if order not in (1, 2):
        raise PreconditionError("order must be 1 or 2")
    h = grid.spacing[axis]
    if grid.periodic:
        return _diff_axis_periodic(v, axis, order, h)
    return _diff_axis_bounded(v, axis, order, h)


def diff(field, axis: int, order: int = 1):
    """diff of a ScalarField / TensorField, returning a field of the same rank."""
    out = diff_array(field.values, field.grid, axis, order)
    if isinstance(field, TensorField):
        return TensorField(field.grid, out)
    return ScalarField(field.grid, out)


def gradient_arrays(v: np.ndarray, grid) -> list:
    return [diff_array(v, grid, a, 1) for a in range(grid.n)]


def laplacian_array(v: np.ndarray, grid) -> np.ndarray:
    out = diff_array(v, grid, 0, 2)
    for a in range(1, grid.n):
        out += diff_array(v, grid, a, 2)
    return out
