"""Discrete elliptic operators: divergence-form Laplace-Beltrami, the
conformal operator, and general rough-coefficient operators in
nondivergence form, plus linear solves and smallest eigenpairs.

Conventions
-----------
A DiscreteOperator stores the mass-weighted ("weak") matrix A and the
diagonal nodal mass M (sqrt(det g) h^n).  The operator it represents acts
as L u = M^{-1} A u, so linear problems L u = f are solved as A u = M f
and eigenproblems as A u = lambda M u.  Divergence-form assemblies are
exactly symmetric and annihilate constants on periodic grids; the general
nondivergence assembly is a row-scaled collocation matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import TensorField, ScalarField
from .errors import PreconditionError, SolverError
from .metric import MetricField, scalar_curvature

A_N = {n: 4.0 * (n - 1) / (n - 2) for n in range(3, 9)}


@dataclass
class EllipticCoeffs:
    """Coefficients of L = a^{ij} d_i d_j + b^i d_i + c with bounds.

    The ellipticity floor and coefficient ceiling are verified on the
    sampled nodes at construction.
    """

    a: TensorField
    b: Optional[np.ndarray] = None          # shape grid + (n,)
    c: Optional[np.ndarray] = None          # shape grid
    lam_ell: float = 0.1
    Lam_ell: float = 100.0

    def __post_init__(self):
        ev = np.linalg.eigvalsh(self.a.values)
        if float(ev[..., 0].min()) < self.lam_ell - 1e-12:
            raise PreconditionError(
                f"ellipticity floor violated: min a-eigenvalue {ev[..., 0].min():.3e} "
                f"< {self.lam_ell}")
        for name, arr in (("b", self.b), ("c", self.c)):
            if arr is not None and float(np.abs(arr).max()) > self.Lam_ell:
                raise PreconditionError(f"coefficient ceiling violated for {name}")

    @property
    def grid(self):
        return self.a.grid


@dataclass
class DiscreteOperator:
    grid: object
    matrix: sp.csr_matrix               # A on unknowns
    mass: np.ndarray                    # nodal weights on unknowns
    symmetric: bool
    bc: str                             # "periodic" | "dirichlet"
    unknown_idx: Optional[np.ndarray] = None    # flat indices (dirichlet only)
    boundary_idx: Optional[np.ndarray] = None
    boundary_matrix: Optional[sp.csr_matrix] = None  # couplings to boundary values
    constants_in_kernel: bool = False
    fft_symbol: Optional[np.ndarray] = None     # preconditioner symbol (periodic)

    def check_symmetry(self, tol=1e-12) -> float:
        d = self.matrix - self.matrix.T
        return float(np.abs(d.data).max()) if d.nnz else 0.0

    def apply(self, values: np.ndarray, boundary_values: Optional[np.ndarray] = None
              ) -> np.ndarray:
        """Nodal action L u = M^{-1}(A u + A_b u_b), shaped like the unknowns."""
        v = values.reshape(-1) if self.bc == "periodic" else values
        out = self.matrix @ v
        if self.boundary_matrix is not None and boundary_values is not None:
            out = out + self.boundary_matrix @ boundary_values
        out = out / self.mass
        return out.reshape(self.grid.shape) if self.bc == "periodic" else out

    def to_matrix_market(self, path):
        from scipy.io import mmwrite
        mmwrite(path, sp.coo_matrix(self.matrix))


def _roll_ids(grid):
    ids = np.arange(grid.num_nodes).reshape(grid.shape)
    plus = [np.roll(ids, -1, a).reshape(-1) for a in range(grid.n)]
    minus = [np.roll(ids, 1, a).reshape(-1) for a in range(grid.n)]
    return ids.reshape(-1), plus, minus


def _d1_matrix(grid, axis) -> sp.csr_matrix:
    N = grid.num_nodes
    ids, plus, minus = _roll_ids(grid)
    h = grid.spacing[axis]
    rows = np.concatenate([ids, ids])
    cols = np.concatenate([plus[axis], minus[axis]])
    vals = np.concatenate([np.full(N, 0.5 / h), np.full(N, -0.5 / h)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _d2_matrix(grid, axis) -> sp.csr_matrix:
    N = grid.num_nodes
    ids, plus, minus = _roll_ids(grid)
    h = grid.spacing[axis]
    rows = np.concatenate([ids, ids, ids])
    cols = np.concatenate([plus[axis], ids, minus[axis]])
    vals = np.concatenate([np.full(N, 1.0 / h**2), np.full(N, -2.0 / h**2),
                           np.full(N, 1.0 / h**2)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _divergence_form(g: MetricField) -> sp.csr_matrix:
    """Symmetric PSD matrix with u^T A u ~ int <grad u, grad u>_g dmu_g.

    Diagonal conductances use half-node averaging of sqrt(det g) g^{ii};
    off-diagonal couplings use centered first differences with nodal
    weights, which keeps exact symmetry.
    """
    grid, n = g.grid, g.n
    N = grid.num_nodes
    hvol = grid.volume_element()
    cond_fields = g.sqrt_det[..., None, None] * g.inv
    ids, plus, minus = _roll_ids(grid)

    rows, cols, vals = [], [], []
    for a in range(n):
        C = cond_fields[..., a, a].reshape(-1)
        kap = 0.5 * (C + C[plus[a]]) * hvol / grid.spacing[a] ** 2
        rows += [ids, plus[a], ids, plus[a]]
        cols += [ids, plus[a], plus[a], ids]
        vals += [kap, kap, -kap, -kap]
    A = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            W = sp.diags(cond_fields[..., a, b].reshape(-1) * hvol)
            Da, Db = _d1_matrix(grid, a), _d1_matrix(grid, b)
            A = A + (Da.T @ W @ Db)
    return A.tocsr()


def _fft_symbol(grid, alpha: float, beta: float) -> np.ndarray:
    """Symbol of alpha*(-Delta_h) + beta times the nodal volume, on a torus."""
    hvol = grid.volume_element()
    sym = np.zeros(grid.shape)
    for a, (d, h) in enumerate(zip(grid.dims, grid.spacing)):
        k = np.fft.fftfreq(d, 1.0 / d)
        lam = (2.0 - 2.0 * np.cos(2.0 * np.pi * k / d)) / h**2
        shape = [1] * grid.n
        shape[a] = d
        sym = sym + lam.reshape(shape)
    return (alpha * sym + beta) * hvol


def assemble(kind: str, arg, bc: Optional[str] = None,
             solve_radius: Optional[float] = None) -> DiscreteOperator:
    """Assemble one of the named operators.

    kind = "laplace_beltrami" (arg: MetricField) builds Delta_g;
    "conformal" builds -a_n Delta_g + R_g; "general" (arg: EllipticCoeffs)
    builds the nondivergence operator.  bc defaults to periodic on a torus
    and dirichlet on a chart; on charts the unknowns are the nodes inside
    `solve_radius` (default: the chart radius).
    """
    if kind == "schrodinger":
        grid = arg[0].grid
    else:
        grid = arg.grid
    if bc is None:
        bc = "periodic" if grid.periodic else "dirichlet"
    if bc == "dirichlet" and grid.periodic:
        raise PreconditionError("Dirichlet bc requested on a TorusGrid")
    if bc == "periodic" and not grid.periodic:
        raise PreconditionError("periodic bc requested on a ChartGrid")
    N = grid.num_nodes
    hvol = grid.volume_element()

    if kind in ("laplace_beltrami", "conformal", "schrodinger"):
        if kind == "schrodinger":
            g, c_shift = arg
        else:
            g = arg
        g.certify_positive()
        Adiv = _divergence_form(g)
        w = g.sqrt_det.reshape(-1) * hvol
        if kind == "laplace_beltrami":
            A = -Adiv
            sym_kernel = True
            fftsym = _fft_symbol(grid, -1.0, 0.0) if grid.periodic else None
        else:
            n = g.n
            a_n = A_N[n]
            if kind == "schrodinger":
                R = np.full(N, float(c_shift))
            else:
                R = scalar_curvature(g).values.reshape(-1)
            A = (a_n * Adiv + sp.diags(R * w)).tocsr()
            sym_kernel = bool(np.abs(R).max() == 0.0)
            fftsym = (_fft_symbol(grid, a_n * float(np.median(g.sqrt_det)),
                                  max(float(np.median(R)), 0.0))
                      if grid.periodic else None)
        symmetric = True
    elif kind == "general":
        coeffs: EllipticCoeffs = arg
        n = grid.n
        a = coeffs.a.values
        L = sp.csr_matrix((N, N))
        for i in range(n):
            L = L + sp.diags(a[..., i, i].reshape(-1)) @ _d2_matrix(grid, i)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                L = L + sp.diags(a[..., i, j].reshape(-1)) @ (
                    _d1_matrix(grid, i) @ _d1_matrix(grid, j))
        if coeffs.b is not None:
            for i in range(n):
                L = L + sp.diags(coeffs.b[..., i].reshape(-1)) @ _d1_matrix(grid, i)
        if coeffs.c is not None:
            L = L + sp.diags(coeffs.c.reshape(-1))
        w = np.full(N, hvol)
        A = (sp.diags(w) @ L).tocsr()
        symmetric = False
        sym_kernel = False
        fftsym = None
    else:
        raise PreconditionError(f"unknown operator kind {kind!r}")

    if bc == "periodic":
        return DiscreteOperator(grid, A.tocsr(), w, symmetric, bc,
                                constants_in_kernel=sym_kernel, fft_symbol=fftsym)

    r_solve = grid.radius if solve_radius is None else solve_radius
    unk = np.flatnonzero(grid.ball_mask(r_solve).reshape(-1))
    bnd = np.flatnonzero(~grid.ball_mask(r_solve).reshape(-1))
    A = A.tocsr()
    A_uu = A[unk][:, unk].tocsr()
    A_ub = A[unk][:, bnd].tocsr()
    return DiscreteOperator(grid, A_uu, w[unk], symmetric, bc,
                            unknown_idx=unk, boundary_idx=bnd, boundary_matrix=A_ub)


def assemble_conformal(g: MetricField, **kw) -> DiscreteOperator:
    return assemble("conformal", g, **kw)


def assemble_laplace_beltrami(g: MetricField, **kw) -> DiscreteOperator:
    return assemble("laplace_beltrami", g, **kw)


def assemble_general(coeffs: EllipticCoeffs, **kw) -> DiscreteOperator:
    return assemble("general", coeffs, **kw)


# ---------------------------------------------------------------------------
# solves


@dataclass
class SolveLog:
    iterations: int = 0
    residuals: list = field(default_factory=list)

    def cb(self, xk):
        self.iterations += 1

    def to_csv(self, stream):
        import csv
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["iteration", "residual"])
        for i, r in enumerate(self.residuals):
            w.writerow([i, repr(r)])


def _fft_precond(op: DiscreteOperator):
    if op.fft_symbol is None:
        return None
    sym = np.where(np.abs(op.fft_symbol) < 1e-30, 1.0, op.fft_symbol)
    zero_mode = np.abs(op.fft_symbol).reshape(-1)[0] < 1e-30
    shape = op.grid.shape

    def apply(r):
        rh = np.fft.fftn(r.reshape(shape))
        rh = rh / sym
        if zero_mode:
            rh.reshape(-1)[0] = 0.0
        return np.fft.ifftn(rh).real.reshape(-1)

    N = op.grid.num_nodes
    return spla.LinearOperator((N, N), matvec=apply)


def solve_linear(op: DiscreteOperator, rhs, tol: float = 1e-10,
                 boundary_values: Optional[np.ndarray] = None,
                 deflate_constants: bool = False, maxiter: Optional[int] = None,
                 log: Optional[SolveLog] = None) -> np.ndarray:
    """Solve L u = rhs, i.e. A u = M rhs (- boundary couplings).

    The symmetric path runs (optionally FFT-preconditioned) conjugate
    gradients; the general path runs ILU-preconditioned BiCGStab.  With
    deflate_constants the rhs and iterates are projected onto the
    mean-zero complement of the constants kernel.  Raises SolverError on
    non-convergence; the returned iterate satisfies the relative residual
    tolerance in the algebraic norm.
    """
    rhs_vals = rhs.values if isinstance(rhs, ScalarField) else np.asarray(rhs)
    if op.bc == "periodic":
        b = op.mass * rhs_vals.reshape(-1)
    else:
        b = op.mass * np.asarray(rhs_vals).reshape(-1)
        if op.boundary_matrix is not None:
            if boundary_values is None:
                boundary_values = np.zeros(op.boundary_matrix.shape[1])
            b = b - op.boundary_matrix @ boundary_values

    A = op.matrix
    N = A.shape[0]
    if log is None:
        log = SolveLog()

    if op.constants_in_kernel and not deflate_constants:
        kernel_comp = float(np.abs(b.sum()) / (np.abs(b).sum() + 1e-300))
        if kernel_comp > 1e-10:
            raise PreconditionError(
                "operator is singular on constants; rhs not compatible "
                "(pass deflate_constants=True for the mean-zero problem)")
        deflate_constants = True

    def project(v):
        return v - v.mean() if deflate_constants else v

    b = project(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(op.grid.shape) if op.bc == "periodic" else np.zeros(N)

    if op.symmetric:
        # CG needs a definite matrix: probe the sign on a fixed vector
        probe = np.arange(N, dtype=float)
        probe = project(probe / np.linalg.norm(probe))
        sgn = 1.0 if float(probe @ (A @ probe)) >= 0 else -1.0
        Aop = spla.LinearOperator((N, N), matvec=lambda v: sgn * project(A @ project(v)))
        Mpre = _fft_precond(op)
        x, info = spla.cg(Aop, sgn * b, rtol=tol * 1e-2, atol=0.0,
                          maxiter=maxiter or 10 * N, M=Mpre, callback=log.cb)
    else:
        try:
            ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=10)
            Mpre = spla.LinearOperator((N, N), matvec=ilu.solve)
        except Exception:
            Mpre = None
        x, info = spla.bicgstab(A, b, rtol=tol * 1e-2, atol=0.0,
                                maxiter=maxiter or 10 * N, M=Mpre, callback=log.cb)
    res = float(np.linalg.norm(A @ x - b) / bnorm)
    log.residuals.append(res)
    if info != 0 or res > tol:
        raise SolverError(f"linear solve did not converge (info={info}, rel res={res:.3e})")
    x = project(x)
    return x.reshape(op.grid.shape) if op.bc == "periodic" else x


def smallest_eigenpair(op: DiscreteOperator, tol: float = 1e-10,
                       maxiter: int = 200, restrict_mean_zero: bool = False):
    """Smallest generalized eigenpair A u = lambda M u by shifted inverse
    iteration.

    The shift comes from a Gershgorin lower bound so A - sigma M stays
    positive definite; the eigenfunction is returned with unit L^2(dmu)
    norm and positive nodal mean (when the mean is not forced to zero).
    """
    if not op.symmetric:
        raise PreconditionError("smallest_eigenpair needs a symmetric operator")
    A, m = op.matrix, op.mass
    N = A.shape[0]
    diag = A.diagonal()
    offsum = np.abs(A).sum(axis=1).A1 - np.abs(diag) if hasattr(np.abs(A).sum(axis=1), "A1") \
        else np.asarray(np.abs(A).sum(axis=1)).reshape(-1) - np.abs(diag)
    lb = float(np.min((diag - offsum) / m))
    sigma = lb - 0.1 * max(1.0, abs(lb))
    S = (A - sigma * sp.diags(m)).tocsr()
    Sop = DiscreteOperator(op.grid, S, m, True, op.bc, op.unknown_idx,
                           op.boundary_idx, None,
                           constants_in_kernel=False, fft_symbol=None)
    if op.fft_symbol is not None:
        Sop.fft_symbol = op.fft_symbol - sigma * op.grid.volume_element()

    def project(v):
        if restrict_mean_zero:
            return v - (m @ v) / m.sum()
        return v

    v = project(np.ones(N)) if not restrict_mean_zero else None
    if v is None or np.linalg.norm(v) == 0.0:
        # deterministic non-constant start
        v = project(np.sin(np.arange(N) * 0.7) + 0.1)
    v = v / np.sqrt(np.dot(v, m * v))
    lam = float(v @ (A @ v))
    for _ in range(maxiter):
        rhs = m * v
        w = solve_linear(Sop, rhs / m, tol=1e-12, deflate_constants=False,
                         maxiter=20 * N)
        w = w.reshape(-1) if op.bc == "periodic" else w
        w = project(w)
        w = w / np.sqrt(np.dot(w, m * w))
        lam = float(w @ (A @ w))
        resid = np.linalg.norm(A @ w - lam * (m * w)) / np.linalg.norm(m * w)
        v = w
        if resid <= tol:
            break
    else:
        raise SolverError(f"inverse iteration did not converge (residual {resid:.3e})")
    if not restrict_mean_zero and (m * v).sum() < 0:
        v = -v
    u = v.reshape(op.grid.shape) if op.bc == "periodic" else v
    return lam, u
