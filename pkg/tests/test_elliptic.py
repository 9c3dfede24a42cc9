import numpy as np
import pytest

from cyl.core import cube, identity_tensor, TensorField
from cyl.errors import PreconditionError
from cyl import metric as M
from cyl import elliptic as E

from conftest import smooth_torus_metric


class TestAssembly:
    def test_flat_laplace_on_fourier_mode(self, torus16):
        op = E.assemble("laplace_beltrami", M.flat(torus16))
        x = torus16.coords()
        u = np.cos(x[..., 0])
        h = torus16.spacing[0]
        assert np.abs(op.apply(u) + u).max() < h**2 / 6 * 1.2

    def test_conformal_flat_is_minus_8_lap(self, torus16):
        conf = E.assemble("conformal", M.flat(torus16))
        lb = E.assemble("laplace_beltrami", M.flat(torus16))
        d = conf.matrix + 8.0 * lb.matrix
        assert abs(d).max() < 1e-12

    def test_general_constant_potential(self, torus16):
        coeffs = E.EllipticCoeffs(a=identity_tensor(torus16),
                                  c=np.full(torus16.shape, 6.0), lam_ell=0.5)
        op = E.assemble("general", coeffs)
        assert np.abs(op.apply(np.ones(torus16.shape)) - 6.0).max() < 1e-12

    def test_divergence_form_symmetric_and_kills_constants(self, torus16):
        g = smooth_torus_metric(torus16)
        op = E.assemble("conformal", g)
        assert op.check_symmetry() <= 1e-12
        lb = E.assemble("laplace_beltrami", g)
        assert np.abs(lb.matrix @ np.ones(torus16.num_nodes)).max() < 1e-12

    def test_ellipticity_gate(self, torus16):
        vals = np.zeros(torus16.shape + (3, 3))
        vals[..., 0, 0] = vals[..., 1, 1] = 1.0
        vals[..., 2, 2] = 0.01
        with pytest.raises(PreconditionError):
            E.EllipticCoeffs(a=TensorField(torus16, vals), lam_ell=0.1)

    def test_dirichlet_on_torus_rejected(self, torus16):
        with pytest.raises(PreconditionError):
            E.assemble("conformal", M.flat(torus16), bc="dirichlet")

    def test_mass_weights_positive(self, torus16):
        op = E.assemble("conformal", smooth_torus_metric(torus16))
        assert np.all(op.mass > 0)

    def test_matrix_market_export(self, torus16, tmp_path):
        op = E.assemble("laplace_beltrami", M.flat(torus16))
        path = tmp_path / "op.mtx"
        op.to_matrix_market(str(path))
        from scipy.io import mmread
        back = mmread(str(path)).tocsr()
        assert abs(back - op.matrix).max() < 1e-15


class TestSolve:
    def test_constant_solution(self, torus16):
        coeffs = E.EllipticCoeffs(a=identity_tensor(torus16),
                                  c=np.full(torus16.shape, 6.0), lam_ell=0.5)
        op = E.assemble("general", coeffs)
        u = E.solve_linear(op, np.full(torus16.shape, 6.0), tol=1e-10)
        assert np.abs(u - 1.0).max() < 1e-9

    def test_fourier_oracle_schrodinger(self, torus16):
        # (-8 lap + 6) u = 6 + 14 cos(x1): continuum solution 1 + cos(x1);
        # the discrete solution replaces the mode eigenvalue by its symbol
        op = E.assemble("schrodinger", (M.flat(torus16), 6.0))
        x = torus16.coords()
        rhs = 6.0 + 14.0 * np.cos(x[..., 0])
        u = E.solve_linear(op, rhs, tol=1e-12)
        h = torus16.spacing[0]
        lam_h = (2 - 2 * np.cos(h)) / h**2
        exact_h = 1.0 + 14.0 / (8 * lam_h + 6) * np.cos(x[..., 0])
        assert np.abs(u - exact_h).max() < 1e-10
        assert np.abs(u - (1 + np.cos(x[..., 0]))).max() < 5 * h**2

    def test_deflated_compatible_solve(self, torus16):
        op = E.assemble("conformal", M.flat(torus16))
        x = torus16.coords()
        rhs = np.cos(x[..., 0])  # mean zero
        u = E.solve_linear(op, rhs, tol=1e-11, deflate_constants=True)
        assert abs(u.mean()) < 1e-12
        res = op.matrix @ u.reshape(-1) - op.mass * rhs.reshape(-1)
        assert np.linalg.norm(res) / np.linalg.norm(op.mass * rhs.reshape(-1)) < 1e-11

    def test_incompatible_rhs_rejected(self, torus16):
        op = E.assemble("conformal", M.flat(torus16))
        with pytest.raises(PreconditionError):
            E.solve_linear(op, np.ones(torus16.shape), tol=1e-10)

    def test_dirichlet_chart_harmonic(self, chart17):
        op = E.assemble("conformal", M.flat(chart17))
        x = chart17.coords().reshape(-1, 3)
        data = x[op.boundary_idx, 0] * x[op.boundary_idx, 1]  # harmonic
        u = E.solve_linear(op, np.zeros(len(op.unknown_idx)), tol=1e-11,
                           boundary_values=data)
        exact = (x[:, 0] * x[:, 1])[op.unknown_idx]
        assert np.abs(u - exact).max() < 1e-10

    def test_solve_log(self, torus16):
        op = E.assemble("schrodinger", (M.flat(torus16), 6.0))
        log = E.SolveLog()
        E.solve_linear(op, np.ones(torus16.shape), tol=1e-10, log=log)
        assert log.residuals[-1] <= 1e-10


class TestEigen:
    def test_flat_conformal_kernel(self, torus16):
        op = E.assemble("conformal", M.flat(torus16))
        lam, u = E.smallest_eigenpair(op, tol=1e-11)
        assert abs(lam) < 1e-11
        assert np.ptp(u) < 1e-9

    def test_constant_potential(self, torus16):
        op = E.assemble("schrodinger", (M.flat(torus16), 6.0))
        lam, u = E.smallest_eigenpair(op, tol=1e-11)
        assert abs(lam - 6.0) < 1e-9

    def test_mean_zero_fourier_eigenvalue(self, torus16):
        # smallest mean-zero eigenvalue of -8 lap: 8 * discrete symbol at |k|=1
        op = E.assemble("conformal", M.flat(torus16))
        lam, u = E.smallest_eigenpair(op, tol=1e-10, restrict_mean_zero=True)
        h = torus16.spacing[0]
        lam_h = 8 * (2 - 2 * np.cos(h)) / h**2
        assert abs(lam - lam_h) < 1e-8

    def test_rayleigh_quotient_matches(self, torus16):
        g = smooth_torus_metric(torus16)
        op = E.assemble("conformal", g)
        lam, u = E.smallest_eigenpair(op, tol=1e-11)
        uv = u.reshape(-1)
        ray = (uv @ (op.matrix @ uv)) / (uv @ (op.mass * uv))
        assert abs(ray - lam) < 1e-10

    def test_first_eigenfunction_single_signed(self, torus16):
        g = smooth_torus_metric(torus16, amp=0.15)
        op = E.assemble("conformal", g)
        lam, u = E.smallest_eigenpair(op, tol=1e-10)
        assert u.min() > 0 or u.max() < 0

    def test_normalization(self, torus16):
        op = E.assemble("schrodinger", (M.flat(torus16), 2.0))
        lam, u = E.smallest_eigenpair(op, tol=1e-10)
        uv = u.reshape(-1)
        assert abs(uv @ (op.mass * uv) - 1.0) < 1e-10

    def test_nonsymmetric_rejected(self, torus16):
        coeffs = E.EllipticCoeffs(a=identity_tensor(torus16),
                                  b=np.ones(torus16.shape + (3,)),
                                  c=np.ones(torus16.shape), lam_ell=0.5)
        op = E.assemble("general", coeffs)
        with pytest.raises(PreconditionError):
            E.smallest_eigenpair(op)

    def test_eigenvalue_convergence_order(self):
        # Richardson fit over three grids for a smooth metric: solve
        # (l1-l2)/(l2-l3) = (h1^p - h2^p)/(h2^p - h3^p) for the order p
        from scipy.optimize import brentq
        lams, hs = [], []
        for d in (16, 24, 32):
            grid = cube(3, d, 2 * np.pi)
            g = smooth_torus_metric(grid, amp=0.1)
            op = E.assemble("conformal", g)
            lam, _ = E.smallest_eigenpair(op, tol=1e-12)
            lams.append(lam)
            hs.append(2 * np.pi / d)
        h1, h2, h3 = hs
        l1, l2, l3 = lams
        ratio = (l1 - l2) / (l2 - l3)

        def f(p):
            return (h1**p - h2**p) / (h2**p - h3**p) - ratio

        order = brentq(f, 0.5, 6.0)
        assert order > 1.8
