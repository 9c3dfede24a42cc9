"""Local cubic (4-point Lagrange) interpolation on structured grids.

Exact for cubics per axis; periodic grids wrap the stencil, chart grids
shift it to stay inside the cube.  Used wherever sampled fields are
composed with coordinate maps.
"""

from __future__ import annotations

import numpy as np


def _lagrange4(s: np.ndarray):
    """Cubic Lagrange weights at offsets (-1, 0, 1, 2) for s in [0, 1)."""
    w = np.empty(s.shape + (4,))
    w[..., 0] = -s * (s - 1.0) * (s - 2.0) / 6.0
    w[..., 1] = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0
    w[..., 2] = -(s + 1.0) * s * (s - 2.0) / 2.0
    w[..., 3] = (s + 1.0) * s * (s - 1.0) / 6.0
    return w


def _lagrange4_deriv(s: np.ndarray):
    d = np.empty(s.shape + (4,))
    d[..., 0] = -(3 * s * s - 6 * s + 2.0) / 6.0
    d[..., 1] = (3 * s * s - 4 * s - 1.0) / 2.0
    d[..., 2] = -(3 * s * s - 2 * s - 2.0) / 2.0
    d[..., 3] = (3 * s * s - 1.0) / 6.0
    return d


def _axis_stencil(x: np.ndarray, origin: float, h: float, npts: int, periodic: bool):
    """Stencil indices (K, 4) and local coordinate s (K,) for one axis."""
    t = (x - origin) / h
    if periodic:
        base = np.floor(t).astype(np.int64)
        s = t - base
        idx = (base[:, None] + np.arange(-1, 3)[None, :]) % npts
        return idx, s
    base = np.floor(t).astype(np.int64)
    # shift the 4-point stencil so [base-1, base+2] stays inside [0, npts-1]
    base = np.clip(base, 1, npts - 3)
    s = t - base
    idx = base[:, None] + np.arange(-1, 3)[None, :]
    return idx, s


def interp_eval(values: np.ndarray, grid, points: np.ndarray,
                want_gradient: bool = False):
    """Evaluate a node array at arbitrary points (K, n) by local cubics.

    Returns vals (K,) or (vals, grads (K, n)) when want_gradient is set.
    Tensor-component arrays can be passed one component at a time.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = grid.n
    origins = [0.0] * n if grid.periodic else [-grid.radius] * n
    idx, s = [], []
    for a in range(n):
        ia, sa = _axis_stencil(pts[:, a], origins[a], grid.spacing[a],
                               grid.shape[a], grid.periodic)
        idx.append(ia)
        s.append(sa)
    w = [_lagrange4(sa) for sa in s]
    if n != 3:
        raise NotImplementedError("cubic interpolation implemented for n = 3")
    gathered = values[idx[0][:, :, None, None], idx[1][:, None, :, None],
                      idx[2][:, None, None, :]]
    out = np.einsum("ka,kb,kc,kabc->k", w[0], w[1], w[2], gathered)
    if not want_gradient:
        return out
    dw = [_lagrange4_deriv(sa) for sa in s]
    grads = np.empty((pts.shape[0], n))
    grads[:, 0] = np.einsum("ka,kb,kc,kabc->k", dw[0], w[1], w[2], gathered) / grid.spacing[0]
    grads[:, 1] = np.einsum("ka,kb,kc,kabc->k", w[0], dw[1], w[2], gathered) / grid.spacing[1]
    grads[:, 2] = np.einsum("ka,kb,kc,kabc->k", w[0], w[1], dw[2], gathered) / grid.spacing[2]
    return out, grads


def interp_tensor(values: np.ndarray, grid, points: np.ndarray) -> np.ndarray:
    """Componentwise interpolation of a (..., n, n) tensor array: (K, n, n)."""
    pts = np.atleast_2d(points)
    n = grid.n
    out = np.empty((pts.shape[0], n, n))
    for i in range(n):
        for j in range(i, n):
            out[:, i, j] = interp_eval(values[..., i, j], grid, pts)
            out[:, j, i] = out[:, i, j]
    return out
