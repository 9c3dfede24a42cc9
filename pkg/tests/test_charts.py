import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyl.core import cube, ChartGrid, TensorField, diff_array
from cyl.errors import PreconditionError
from cyl import metric as M
from cyl import charts as CH

from conftest import conformal_metric


class TestKelvin:
    def test_direct_value(self):
        z = CH.kelvin(np.array([0.5, 0.0, 0.0]))
        assert np.allclose(z, [2.0, 0.0, 0.0])

    def test_unit_sphere_fixed(self):
        x = np.array([[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]])
        assert np.abs(CH.kelvin(x) - x).max() < 1e-15

    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3)
           .filter(lambda v: sum(t * t for t in v) > 1e-4))
    @settings(max_examples=100, deadline=None)
    def test_involution(self, v):
        x = np.array([v])
        assert np.abs(CH.kelvin(CH.kelvin(x)) - x).max() < 1e-12 * max(
            1.0, np.abs(x).max())

    def test_jacobian_determinant(self):
        # symbolic oracle: det = -|x|^{-2n}; checked against FD Jacobian
        x = np.array([[0.3, -0.4, 0.2]])
        J = CH.kelvin_jacobian(x)[0]
        r = np.linalg.norm(x)
        assert abs(np.linalg.det(J) + r**-6) < 1e-10 * r**-6
        fd = np.empty((3, 3))
        for c in range(3):
            dz = np.zeros((1, 3))
            dz[0, c] = 1e-7
            fd[:, c] = (CH.kelvin(x + dz) - CH.kelvin(x - dz))[0] / 2e-7
        assert np.abs(fd - J).max() < 1e-6

    def test_origin_rejected(self):
        with pytest.raises(PreconditionError):
            CH.kelvin(np.zeros(3))


class TestInvertNearIdentity:
    def test_identity_map(self):
        grid = cube(3, 16, 2 * np.pi)
        phi = CH.identity_map(grid)
        psi = CH.invert_near_identity(phi)
        assert psi.iterations <= 1
        y = grid.coords().reshape(-1, 3)
        assert np.abs(psi(y) - y).max() < 1e-14

    def test_sin_perturbation(self):
        grid = cube(3, 32, 2 * np.pi)

        def phi(p):
            return p + 0.1 * np.sin(p)

        imgs = phi(grid.coords().reshape(-1, 3)).reshape(grid.shape + (3,))
        cmap = CH.CoordinateMap(grid, imgs, forward=phi)
        psi = CH.invert_near_identity(cmap, tol=1e-10)
        y = grid.coords().reshape(-1, 3)
        assert np.abs(phi(psi(y)) - y).max() <= 1e-10

    def test_linear_rate_matches_contraction(self):
        # iteration count consistent with the geometric-series rate |Dv|
        grid = cube(3, 24, 2 * np.pi)
        amp = 0.2

        def phi(p):
            return p + amp * np.sin(p)

        imgs = phi(grid.coords().reshape(-1, 3)).reshape(grid.shape + (3,))
        psi = CH.invert_near_identity(CH.CoordinateMap(grid, imgs, forward=phi),
                                      tol=1e-10)
        predicted = np.log(1e-10 / amp) / np.log(amp)
        assert psi.iterations <= predicted + 6

    def test_contraction_gate(self):
        grid = cube(3, 16, 2 * np.pi)

        def phi(p):
            return p + 0.6 * np.sin(p)

        imgs = phi(grid.coords().reshape(-1, 3)).reshape(grid.shape + (3,))
        with pytest.raises(PreconditionError, match="contraction"):
            CH.invert_near_identity(CH.CoordinateMap(grid, imgs, forward=phi))


class TestNormalCoordinates:
    def test_flat_identity(self, chart17):
        cmap, gnew = CH.normal_coordinates(M.flat(chart17))
        pole = gnew.grid.pole_index
        assert np.abs(gnew.values[pole] - np.eye(3)).max() < 1e-12
        assert np.abs(cmap.images - cmap.source_grid.coords()).max() < 1e-12

    def test_round_chart_linear_rescale(self):
        grid = ChartGrid(3, 1.0, (17,) * 3)
        cmap, gnew = CH.normal_coordinates(M.sphere_chart(grid))
        pole = gnew.grid.pole_index
        assert np.abs(gnew.values[pole] - np.eye(3)).max() < 1e-10
        # g(0) = 4 delta: leading map is the rescale by 1/2
        y = np.array([[0.1, 0.0, 0.0]])
        assert np.abs(cmap(y) - 0.5 * y).max() < 1e-3

    def test_gradient_killed_at_second_order(self):
        errs, hs = [], []
        for dims in (17, 25, 33):
            grid = ChartGrid(3, 1.0, (dims,) * 3)
            g = conformal_metric(grid)
            cmap, gnew = CH.normal_coordinates(g)
            pole = gnew.grid.pole_index
            dg0 = max(np.abs(diff_array(gnew.values, gnew.grid, a, 1)[pole]).max()
                      for a in range(3))
            errs.append(dg0)
            hs.append(1.0 / (dims - 1))
        order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert order > 1.5
        assert errs[-1] < 5e-4

    def test_torus_rejected(self, torus16):
        with pytest.raises(PreconditionError):
            CH.normal_coordinates(M.flat(torus16))


class TestHarmonicCoordinates:
    def test_flat_identity(self, chart17):
        cmap, gnew, diag = CH.harmonic_coordinates(M.flat(chart17))
        mask = chart17.radii() < 0.5
        assert np.abs(cmap.images - chart17.coords())[mask].max() < 1e-10

    def test_conformal_reduction(self):
        grid = ChartGrid(3, 1.0, (33,) * 3)
        g = conformal_metric(grid, amp=0.3)
        cmap, gnew, diag = CH.harmonic_coordinates(g)
        assert diag["post_contracted_christoffel"] \
            <= 0.1 * diag["pre_contracted_christoffel"]

    def test_divergence_residual_at_solver_tolerance(self):
        grid = ChartGrid(3, 1.0, (25,) * 3)
        g = conformal_metric(grid, amp=0.2)
        from cyl import elliptic
        rho = 0.5
        op = elliptic.assemble("laplace_beltrami", g, solve_radius=rho)
        coords = grid.coords().reshape(-1, 3)
        for l in range(3):
            sol = elliptic.solve_linear(op, np.zeros(len(op.unknown_idx)),
                                        tol=1e-11,
                                        boundary_values=coords[op.boundary_idx, l])
            res = op.matrix @ sol + op.boundary_matrix @ coords[op.boundary_idx, l]
            assert np.linalg.norm(res) / np.linalg.norm(
                op.boundary_matrix @ coords[op.boundary_idx, l]) < 1e-10

    def test_refinement_monotone_on_rough_restriction(self):
        # chart restriction of a rough torus metric: post-map contracted
        # Christoffel norm decreases under refinement
        vals = []
        for dims in (17, 25):
            grid = ChartGrid(3, 1.0, (dims,) * 3)
            gr = cube(3, 32, 2 * np.pi)
            rough = M.rough_torus(gr, q=4.0, amplitude=0.05, seed=11,
                                  pin_pole=True)
            from cyl.core import interp_tensor
            coords = (grid.coords() + np.pi).reshape(-1, 3)
            sampled = interp_tensor(rough.values, gr, coords)
            sampled = sampled.reshape(grid.shape + (3, 3))
            sampled = sampled / sampled[grid.pole_index][0, 0]
            gm = M.MetricField(TensorField(grid, sampled))
            _, _, diag = CH.harmonic_coordinates(gm)
            vals.append(diag["post_contracted_christoffel"])
        assert vals[1] <= vals[0]


class TestCoordinateMapIO:
    def test_csv(self, chart17):
        import io
        cmap = CH.identity_map(chart17)
        buf = io.StringIO()
        cmap.to_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].startswith("i0,i1,i2,x0")
        assert len(lines) == chart17.num_nodes + 1

    def test_jacobian_floor(self, chart17):
        images = np.zeros(chart17.shape + (3,))
        cmap = CH.CoordinateMap(chart17, images)
        with pytest.raises(PreconditionError):
            cmap.check_invertible()
