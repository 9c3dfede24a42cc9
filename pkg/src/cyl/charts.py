"""Coordinate constructions: normal and harmonic coordinates on charts,
Kelvin inversion, and Neumann-iteration inversion of near-identity maps.

The normal-coordinate change is the explicit affine-plus-quadratic map (no
exponential map), which works for C^1 metrics.  Harmonic coordinates solve
the divergence-form Dirichlet problem for each coordinate function on the
half-radius ball.  Composition of maps with sampled fields uses local
cubic interpolation; that interpolation error is part of every reported
tolerance downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ChartGrid, TensorField, interp_eval, interp_tensor, diff_array
from .errors import PreconditionError, SolverError
from .metric import MetricField, christoffels, contracted_christoffels
from . import elliptic

JAC_FLOOR = 1e-8


@dataclass
class CoordinateMap:
    """A coordinate change sampled on a source grid.

    `images` holds the image of every source node; `forward` is an optional
    closed-form evaluator used instead of interpolation when present.
    """

    source_grid: object
    images: np.ndarray                      # grid.shape + (n,)
    forward: Optional[Callable] = None
    inverse: Optional["CoordinateMap"] = None
    iterations: int = 0

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.forward is not None:
            return np.asarray(self.forward(pts))
        out = np.empty_like(pts)
        for a in range(self.source_grid.n):
            out[:, a] = interp_eval(self.images[..., a], self.source_grid, pts)
        return out

    def jacobian_nodes(self) -> np.ndarray:
        """Per-node Jacobian d image / d source by stencils, shape + (n, n).

        Differencing the displacement field keeps periodic wrap valid when
        the map itself is only periodic up to the deck transformation.
        """
        grid, n = self.source_grid, self.source_grid.n
        disp = self.images - grid.coords()
        J = np.empty(grid.shape + (n, n))
        for a in range(n):
            d = diff_array(disp, grid, a, 1)
            J[..., :, a] = d
        return J + np.eye(n)

    def check_invertible(self):
        det = np.linalg.det(self.jacobian_nodes())
        worst = float(np.abs(det).min())
        if worst <= JAC_FLOOR:
            raise PreconditionError(f"map Jacobian nearly singular (|det| min {worst:.2e})")
        return worst

    def displacement_bound(self) -> float:
        """sup-norm of D(map) - Id over the source nodes."""
        J = self.jacobian_nodes()
        n = self.source_grid.n
        D = J - np.eye(n)
        return float(np.abs(D).max())

    def to_csv(self, stream):
        import csv
        w = csv.writer(stream, lineterminator="\n")
        grid = self.source_grid
        n = grid.n
        w.writerow([f"i{k}" for k in range(n)] + [f"x{k}" for k in range(n)]
                   + [f"y{k}" for k in range(n)])
        coords = grid.coords().reshape(-1, n)
        imgs = self.images.reshape(-1, n)
        for idx, x, y in zip(np.ndindex(grid.shape), coords, imgs):
            w.writerow([*idx, *(repr(c) for c in x), *(repr(c) for c in y)])


def identity_map(grid) -> CoordinateMap:
    return CoordinateMap(grid, grid.coords().copy(), forward=lambda p: p)


# ---------------------------------------------------------------------------
# kelvin inversion


def kelvin(x: np.ndarray) -> np.ndarray:
    """z = x / |x|^2; an involution away from the origin."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    if np.any(r2 == 0.0):
        raise PreconditionError("kelvin transform undefined at the origin")
    return x / r2


def kelvin_jacobian(x: np.ndarray) -> np.ndarray:
    """dz^i/dx^j = (delta_ij - 2 xhat_i xhat_j)/|x|^2; |det| = |x|^{-2n}."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    xh = x / np.sqrt(r2)[..., None]
    eye = np.eye(n)
    J = (eye[None, :, :] - 2.0 * np.einsum("...i,...j->...ij", xh, xh)) / r2[..., None, None]
    return J


# ---------------------------------------------------------------------------
# near-identity inversion (Neumann / fixed-point iteration)


def invert_near_identity(phi: CoordinateMap, tol: float = 1e-10,
                         max_iter: int = 200) -> CoordinateMap:
    """Invert phi = Id + v by iterating psi_{k+1}(y) = y - v(psi_k(y)).

    Requires the contraction bound sup|D phi - Id| < 1/2; convergence is
    certified a posteriori by the composition error sup|phi(psi(y)) - y|.
    """
    grid = phi.source_grid
    bound = phi.displacement_bound()
    if bound >= 0.5:
        raise PreconditionError(
            f"contraction bound violated: sup|Dphi - Id| = {bound:.3f} >= 1/2")

    y = grid.coords().reshape(-1, grid.n)

    def v_of(pts):
        return phi(pts) - pts

    psi = y.copy()
    its = 0
    for its in range(1, max_iter + 1):
        new = y - v_of(psi)
        step = float(np.abs(new - psi).max())
        psi = new
        comp = float(np.abs(phi(psi) - y).max())
        if comp <= tol:
            break
        if step == 0.0:
            break
    comp = float(np.abs(phi(psi) - y).max())
    if comp > tol:
        raise SolverError(f"near-identity inversion stalled (composition error {comp:.2e})")
    inv = CoordinateMap(grid, psi.reshape(grid.shape + (grid.n,)), iterations=its)
    inv.inverse = phi
    return inv


# ---------------------------------------------------------------------------
# normal coordinates


def _sym_sqrt(mat: np.ndarray, inverse: bool = False) -> np.ndarray:
    w, V = np.linalg.eigh(mat)
    if np.any(w <= 0):
        raise PreconditionError("matrix not positive definite")
    d = w**(-0.5) if inverse else w**0.5
    return (V * d) @ V.T


def _metric_at(g: MetricField, pts: np.ndarray) -> np.ndarray:
    if g.callback is not None:
        return np.asarray(g.callback(pts))
    return interp_tensor(g.values, g.grid, pts)


def normal_coordinates(g: MetricField, radius_factor: float = 0.75,
                       dims: Optional[int] = None):
    """Affine + quadratic change making g(0) = delta and dg(0) = O(h^2).

    The source-from-normal map is x(y) = S y - 1/2 Gamma(0)(S y, S y) with
    S the inverse square root of g(0).  Returns the map and the
    transformed metric sampled on a new chart grid.
    """
    grid = g.grid
    if not isinstance(grid, ChartGrid):
        raise PreconditionError("normal coordinates need a ChartGrid")
    n = grid.n
    pole = grid.pole_index
    g0 = g.values[pole]
    gam0 = christoffels(g).values[pole]          # Gamma^i_{jk}(0)
    S = _sym_sqrt(g0, inverse=True)

    # stay inside the source cube: |x(y)| <= |S| |y| (1 + O(|Gamma| |y|))
    opnorm = float(np.linalg.eigvalsh(S)[-1])
    r_new = radius_factor * grid.radius / opnorm
    new_grid = ChartGrid(n, r_new, (dims or grid.dims[0],) * n)

    def x_of_y(y):
        y = np.atleast_2d(y)
        Sy = y @ S.T
        quad = 0.5 * np.einsum("ijk,pj,pk->pi", gam0, Sy, Sy)
        return Sy - quad

    def jac_of_y(y):
        y = np.atleast_2d(y)
        Sy = y @ S.T
        outer = np.einsum("ijk,pk->pij", gam0, Sy)  # Gamma^i_{jk} (Sy)^k
        J = S[None, :, :] - outer @ S
        return J  # dx^i/dy^a

    y_nodes = new_grid.coords().reshape(-1, n)
    x_img = x_of_y(y_nodes)
    if np.max(np.abs(x_img)) > grid.radius:
        raise PreconditionError("normal-coordinate map leaves the source chart; "
                                "lower radius_factor")
    J = jac_of_y(y_nodes)
    if np.min(np.abs(np.linalg.det(J))) <= JAC_FLOOR:
        raise PreconditionError("normal-coordinate map loses Jacobian invertibility")

    gx = _metric_at(g, x_img)
    g_new = np.einsum("pia,pjb,pij->pab", J, J, gx).reshape(new_grid.shape + (n, n))
    g_new = 0.5 * (g_new + np.swapaxes(g_new, -1, -2))
    cmap = CoordinateMap(new_grid, x_img.reshape(new_grid.shape + (n,)),
                         forward=x_of_y)
    out = MetricField(TensorField(new_grid, g_new), regularity=g.regularity)
    return cmap, out


# ---------------------------------------------------------------------------
# harmonic coordinates


def harmonic_coordinates(g: MetricField, radius_factor: float = 0.5,
                         sample_factor: float = 0.5, dims: Optional[int] = None,
                         tol: float = 1e-11):
    """Harmonic chart via the divergence-form Dirichlet problem.

    Solves d_i(sqrt(det g) g^{ij} d_j x^l) = 0 on the ball of half the
    chart radius with x^l = y^l on its rim, then normalizes so the new
    coordinates vanish at the pole and the transformed metric is the
    identity there.  Returns (map, transformed metric, diagnostics).
    """
    grid = g.grid
    if not isinstance(grid, ChartGrid):
        raise PreconditionError("harmonic coordinates need a ChartGrid")
    n = grid.n
    rho = radius_factor * grid.radius
    op = elliptic.assemble("laplace_beltrami", g, solve_radius=rho)

    coords = grid.coords()
    xfields = coords.copy()  # x^l = y^l outside the solve ball
    flat = coords.reshape(-1, n)
    for l in range(n):
        bvals = flat[op.boundary_idx, l]
        sol = elliptic.solve_linear(op, np.zeros(len(op.unknown_idx)), tol=tol,
                                    boundary_values=bvals)
        xl = xfields[..., l].reshape(-1)
        xl[op.unknown_idx] = sol
        xfields[..., l] = xl.reshape(grid.shape)

    pole = grid.pole_index
    xfields = xfields - xfields[pole]

    # Jacobian K = d x / d y at the pole, then the linear normalization
    K = np.empty((n, n))
    for a in range(n):
        K[:, a] = diff_array(xfields, grid, a, 1)[pole]
    Kinv = np.linalg.inv(K)
    gtilde0 = Kinv.T @ g.values[pole] @ Kinv      # metric at 0 in x-coords
    L = _sym_sqrt(gtilde0)
    zfields = np.einsum("ab,...b->...a", L, xfields)

    # forward map y -> z and its Jacobian by interpolation of the samples
    def z_of_y(pts):
        pts = np.atleast_2d(pts)
        out = np.empty_like(pts)
        for a in range(n):
            out[:, a] = interp_eval(zfields[..., a], grid, pts)
        return out

    def dz_of_y(pts):
        pts = np.atleast_2d(pts)
        J = np.empty(pts.shape[:-1] + (n, n))
        for a in range(n):
            _, gr = interp_eval(zfields[..., a], grid, pts, want_gradient=True)
            J[..., a, :] = gr
        return J

    # the sampled cube's corners must stay inside the smooth solve ball
    if sample_factor * np.sqrt(n) >= 0.95:
        raise PreconditionError("sample_factor too large for the solve ball")
    r_z = sample_factor * rho
    new_grid = ChartGrid(n, r_z, (dims or grid.dims[0],) * n)
    z_nodes = new_grid.coords().reshape(-1, n)

    # invert z(y) at the new nodes by damped Newton from the linearization
    J0 = dz_of_y(np.zeros((1, n)))[0]
    y = z_nodes @ np.linalg.inv(J0).T
    for _ in range(40):
        F = z_of_y(y) - z_nodes
        err = np.abs(F).max()
        if err < 1e-12 * max(1.0, r_z):
            break
        J = dz_of_y(y)
        step = np.linalg.solve(J, F[..., None])[..., 0]
        y = y - step
        if np.max(np.abs(y)) > 0.98 * grid.radius:
            raise SolverError("harmonic-chart inversion left the source chart")
    else:
        raise SolverError("harmonic-chart inversion did not converge")

    Jy = dz_of_y(y)                 # dz/dy at y(z)
    Jyz = np.linalg.inv(Jy)         # dy/dz
    gy = _metric_at(g, y)
    g_new = np.einsum("pia,pjb,pij->pab", Jyz, Jyz, gy)
    g_new = 0.5 * (g_new + np.swapaxes(g_new, -1, -2))
    g_new = g_new.reshape(new_grid.shape + (n, n))
    out = MetricField(TensorField(new_grid, g_new), regularity=g.regularity)

    cmap = CoordinateMap(grid, zfields, forward=z_of_y)
    diagnostics = {
        "pre_contracted_christoffel": float(
            np.abs(_contracted_norm_inside(g, 0.9 * r_z)).max()),
        "post_contracted_christoffel": float(
            np.abs(_contracted_norm_inside(out, 0.9 * r_z)).max()),
    }
    return cmap, out, diagnostics


def _contracted_norm_inside(g: MetricField, radius: float) -> np.ndarray:
    c = contracted_christoffels(g)
    mask = g.grid.radii() < radius
    return c[mask]
