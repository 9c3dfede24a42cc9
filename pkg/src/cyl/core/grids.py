"""Structured grids: periodic boxes and chart balls with an excluded pole."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from ..errors import PreconditionError


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on an n-torus.

    Node coordinates along axis i are j * spacing[i], j = 0..dims[i]-1;
    indexing wraps periodically.
    """

    n: int
    dims: Tuple[int, ...]
    periods: Tuple[float, ...]

    def __post_init__(self):
        if self.n < 3:
            raise PreconditionError("n >= 3 supported")
        if len(self.dims) != self.n or len(self.periods) != self.n:
            raise PreconditionError("dims/periods must have length n")
        if any(d < 8 for d in self.dims):
            raise PreconditionError("need >= 8 nodes per axis")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(p / d for p, d in zip(self.periods, self.dims))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.dims

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def periodic(self) -> bool:
        return True

    def axes(self):
        return [np.arange(d) * h for d, h in zip(self.dims, self.spacing)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape dims + (n,)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def volume_element(self) -> float:
        return float(np.prod(self.spacing))


def cube(n: int, dims: int, period: float) -> TorusGrid:
    return TorusGrid(n=n, dims=(dims,) * n, periods=(period,) * n)


@dataclass(frozen=True)
class ChartGrid:
    """Uniform grid on the cube [-r0, r0]^n covering the chart ball |x| <= r0.

    The pole p is always the origin and is a grid node (dims must be odd).
    When a singular field is attached, the pole node is masked out of the
    unknown set; its printed value is a fitted limit, never a stencil value.
    """

    n: int
    radius: float
    dims: Tuple[int, ...]

    def __post_init__(self):
        if self.n < 3:
            raise PreconditionError("n >= 3 supported")
        dims = self.dims if isinstance(self.dims, tuple) else (self.dims,) * self.n
        object.__setattr__(self, "dims", tuple(int(d) for d in dims))
        if any(d < 9 for d in self.dims):
            raise PreconditionError("need >= 9 nodes per axis on charts")
        if any(d % 2 == 0 for d in self.dims):
            raise PreconditionError("chart dims must be odd so the pole is a node")
        if self.radius <= 0:
            raise PreconditionError("radius must be positive")

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(2.0 * self.radius / (d - 1) for d in self.dims)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.dims

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def periodic(self) -> bool:
        return False

    @property
    def pole_index(self) -> Tuple[int, ...]:
        return tuple(d // 2 for d in self.dims)

    def axes(self):
        return [np.linspace(-self.radius, self.radius, d) for d in self.dims]

    def coords(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.coords(), axis=-1)

    def ball_mask(self, r: float | None = None) -> np.ndarray:
        """Nodes with |x| < r (default: the chart radius)."""
        return self.radii() < (self.radius if r is None else r)

    def boundary_mask(self) -> np.ndarray:
        """Nodes outside the open chart ball; Dirichlet data lives here."""
        return ~self.ball_mask()

    def volume_element(self) -> float:
        return float(np.prod(self.spacing))
