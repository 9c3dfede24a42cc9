import numpy as np
import pytest

from cyl.core import cube, ChartGrid, TensorField
from cyl.metric import MetricField, flat


@pytest.fixture
def torus16():
    return cube(3, 16, 2 * np.pi)


@pytest.fixture
def chart17():
    return ChartGrid(3, 1.0, (17, 17, 17))


def conformal_metric(grid, amp=0.2, k1=0.9, k2=0.7):
    """e^{2 phi} delta with phi vanishing at the chart pole, with callback."""

    def cb(x):
        x = np.asarray(x)
        p = amp * np.sin(k1 * x[..., 0] + 0.3) * np.cos(k2 * x[..., 1] + 0.2)
        p0 = amp * np.sin(0.3) * np.cos(0.2)
        return np.exp(2.0 * (p - p0))[..., None, None] * np.eye(3)

    return MetricField(TensorField(grid, cb(grid.coords()), callback=cb))


def smooth_torus_metric(grid, amp=0.1):
    """Smooth low-mode non-conformal perturbation of the flat torus."""
    x = grid.coords()
    pert = np.zeros(grid.shape + (3, 3))
    s1, s2 = np.sin(x[..., 0]), np.sin(x[..., 1] + 0.4)
    c2 = np.cos(x[..., 2])
    pert[..., 0, 0] = s1 * c2
    pert[..., 1, 1] = -0.7 * s2
    pert[..., 2, 2] = 0.4 * s1 * s2
    pert[..., 0, 1] = pert[..., 1, 0] = 0.5 * c2 * s2
    vals = np.eye(3) + amp * pert
    return MetricField(TensorField(grid, vals))
