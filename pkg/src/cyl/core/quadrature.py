"""Sphere quadrature: product Gauss-Legendre (polar) x uniform azimuth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PreconditionError


@dataclass(frozen=True)
class SphereQuadrature:
    """Quadrature on the unit 2-sphere, exact for harmonics up to ~2*order-1.

    Nodes are the tensor product of `order` Gauss-Legendre points in
    cos(theta) and 2*order uniform azimuths; all weights are positive and
    sum to 4 pi to rounding.
    """

    order: int = 12
    radius: float = 1.0

    def __post_init__(self):
        if self.order < 2:
            raise PreconditionError("order >= 2")
        if self.radius <= 0:
            raise PreconditionError("radius > 0")


def sphere_nodes(quad: SphereQuadrature):
    """Unit directions (K, 3) and weights (K,) summing to 4 pi."""
    m = quad.order
    mu, wmu = np.polynomial.legendre.leggauss(m)
    phi = (np.arange(2 * m) + 0.5) * (np.pi / m)
    wphi = np.pi / m
    sin_t = np.sqrt(1.0 - mu**2)
    dirs = np.empty((m, 2 * m, 3))
    dirs[..., 0] = sin_t[:, None] * np.cos(phi)[None, :]
    dirs[..., 1] = sin_t[:, None] * np.sin(phi)[None, :]
    dirs[..., 2] = mu[:, None]
    w = (wmu[:, None] * wphi) * np.ones_like(phi)[None, :]
    return dirs.reshape(-1, 3), w.reshape(-1)


def sphere_integral(f, quad: SphereQuadrature, radius: float | None = None) -> float:
    """Integral over the sphere of radius r: sum w_i f(dir_i) r^(n-1), n = 3.

    The callback receives an array of unit directions (K, 3) and must
    return finite values at every node.
    """
    r = quad.radius if radius is None else float(radius)
    dirs, w = sphere_nodes(quad)
    vals = np.asarray(f(dirs), dtype=float)
    if vals.shape != (len(w),):
        raise PreconditionError("callback must return one value per direction")
    if not np.all(np.isfinite(vals)):
        raise PreconditionError("non-finite callback value at a quadrature node")
    return float(np.dot(w, vals) * r**2)
