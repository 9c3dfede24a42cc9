"""Metric tensor calculus and generators of test metrics.

Scalar curvature of rough metrics is computed with the same centered
stencils as smooth ones; the accuracy loss under roughness is something we
measure in tests rather than hide behind mollification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ChartGrid, TorusGrid, TensorField, ScalarField, diff_array
from .errors import PreconditionError

PD_FLOOR = 1e-6  # hard error below this smallest eigenvalue


@dataclass
class MetricField:
    """Sampled Riemannian metric with inverse/determinant caches."""

    tensor: TensorField
    regularity: str = "smooth"  # "smooth" or "rough(q)"

    def __post_init__(self):
        self._inv = None
        self._det = None
        self._scan_done = False

    @property
    def grid(self):
        return self.tensor.grid

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @property
    def callback(self):
        return self.tensor.callback

    def certify_positive(self):
        if self._scan_done:
            return
        ev = np.linalg.eigvalsh(self.values)
        smallest = float(ev[..., 0].min())
        if smallest <= PD_FLOOR:
            raise PreconditionError(
                f"metric not certifiably positive definite (min eig {smallest:.3e})")
        self._scan_done = True

    @property
    def inv(self) -> np.ndarray:
        if self._inv is None:
            self.certify_positive()
            self._inv = np.linalg.inv(self.values)
        return self._inv

    @property
    def det(self) -> np.ndarray:
        if self._det is None:
            self._det = np.linalg.det(self.values)
        return self._det

    @property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det)

    def check_inverse(self, tol=1e-10):
        eye = np.einsum("...ij,...jk->...ik", self.values, self.inv)
        target = np.zeros_like(eye)
        for i in range(self.n):
            target[..., i, i] = 1.0
        return float(np.max(np.abs(eye - target))) <= tol


@dataclass
class ChristoffelField:
    """Per-node Gamma^k_{ij}, symmetric in (i, j); axes order [..., k, i, j]."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        sym_err = np.max(np.abs(self.values - np.swapaxes(self.values, -1, -2)))
        if sym_err > 1e-10:
            raise PreconditionError("Christoffels must be symmetric in (i, j)")


@dataclass
class ASMetricCallback:
    """Closed-form asymptotically Schwarzschildian metric on the exterior.

    g_ij(z) = (1 + 4 m_gen/|z|) delta_ij + amplitude |z|^(-1-eps) B_ij(z/|z|)
    with B_ij = zhat_i zhat_j, so the remainder decays at order eps with one
    derivative.
    """

    m_gen: float
    eps: float
    amplitude: float = 0.0

    def __post_init__(self):
        if self.eps <= 0:
            raise PreconditionError("tail exponent eps must be positive")

    def metric(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        r = np.linalg.norm(z, axis=-1)
        zh = z / r[:, None]
        out = np.zeros(z.shape[:-1] + (3, 3))
        lead = 1.0 + 4.0 * self.m_gen / r
        for i in range(3):
            out[..., i, i] = lead
        tail = self.amplitude * r ** (-1.0 - self.eps)
        out += tail[..., None, None] * np.einsum("...i,...j->...ij", zh, zh)
        return out

    def dmetric(self, z: np.ndarray) -> np.ndarray:
        """partial_c g_ij, closed form; shape (..., c, i, j)."""
        z = np.atleast_2d(z)
        r = np.linalg.norm(z, axis=-1)
        zh = z / r[:, None]
        out = np.zeros(z.shape[:-1] + (3, 3, 3))
        dlead = -4.0 * self.m_gen / r**2  # d/dr of the leading factor
        for c in range(3):
            for i in range(3):
                out[..., c, i, i] += dlead * zh[..., c]
        a, e = self.amplitude, self.eps
        tail = a * r ** (-1.0 - e)
        dtail = -(1.0 + e) * a * r ** (-2.0 - e)
        # d_c (tail * zh_i zh_j)
        P = np.einsum("...i,...j->...ij", zh, zh)
        dzh = (np.eye(3)[None, :, :] - np.einsum("...i,...j->...ij", zh, zh)) / r[:, None, None]
        for c in range(3):
            out[..., c, :, :] += dtail[..., None, None] * zh[..., c, None, None] * P
            out[..., c, :, :] += tail[..., None, None] * (
                np.einsum("...i,...j->...ij", dzh[..., c, :], zh)
                + np.einsum("...i,...j->...ij", zh, dzh[..., c, :]))
        return out

    def sampled_decay_ok(self, radii=(20.0, 50.0, 100.0), tol=2.0) -> bool:
        """Check g - (1+4m/|z|)delta = O(|z|^{-1-eps}) with one derivative."""
        for r in radii:
            z = np.array([[r, 0.0, 0.0]])
            g = self.metric(z)[0]
            lead = (1.0 + 4.0 * self.m_gen / r) * np.eye(3)
            rem = np.max(np.abs(g - lead))
            if rem > tol * max(self.amplitude, 1e-300) * r ** (-1.0 - self.eps):
                return False
        return True


def christoffels(g: MetricField) -> ChristoffelField:
    """Gamma^k_{ij} = 1/2 g^{kl}(d_i g_{jl} + d_j g_{il} - d_l g_{ij})."""
    g.certify_positive()
    grid, n = g.grid, g.n
    dg = np.empty(grid.shape + (n, n, n))  # [..., a, i, j] = d_a g_ij
    for a in range(n):
        dg[..., a, :, :] = diff_array(g.values, grid, a, 1)
    # B[..., l, i, j] = d_i g_{jl} + d_j g_{il} - d_l g_{ij}
    B = np.empty_like(dg)
    for l in range(n):
        for i in range(n):
            for j in range(n):
                B[..., l, i, j] = dg[..., i, j, l] + dg[..., j, i, l] - dg[..., l, i, j]
    del dg
    gamma = 0.5 * np.einsum("...kl,...lij->...kij", g.inv, B, optimize=True)
    return ChristoffelField(grid, gamma)


def contracted_christoffels(g: MetricField, gamma: Optional[ChristoffelField] = None
                            ) -> np.ndarray:
    """g^{ij} Gamma^k_{ij}, shape grid + (n,). Vanishes in harmonic coordinates."""
    if gamma is None:
        gamma = christoffels(g)
    return np.einsum("...ij,...kij->...k", g.inv, gamma.values, optimize=True)


def scalar_curvature(g: MetricField) -> ScalarField:
    """R_g by the standard contraction of the curvature of Gamma.

    Second-order accurate for smooth g; for rough(q) metrics the centered
    stencils are applied as-is and the accuracy degradation is measured by
    the test suite.
    """
    grid, n = g.grid, g.n
    gamma = christoffels(g).values
    ginv = g.inv
    R = np.zeros(grid.shape)
    # term 1: g^{ij} d_k Gamma^k_{ij}
    for k in range(n):
        dgam = diff_array(gamma[..., k, :, :], grid, k, 1)
        R += np.einsum("...ij,...ij->...", ginv, dgam)
    # term 2: -g^{ij} d_j Gamma^k_{ik}
    trace = np.einsum("...kki->...i", gamma)  # T_i = Gamma^k_{ki}
    for j in range(n):
        dT = diff_array(trace, grid, j, 1)  # d_j T_i for all i
        R -= np.einsum("...i,...i->...", ginv[..., :, j], dT)
    # term 3: +g^{ij} Gamma^k_{kl} Gamma^l_{ij}
    contr = np.einsum("...ij,...lij->...l", ginv, gamma)
    R += np.einsum("...l,...l->...", trace, contr)
    # term 4: -g^{ij} Gamma^k_{jl} Gamma^l_{ik}
    R -= np.einsum("...ij,...kjl,...lik->...", ginv, gamma, gamma, optimize=True)
    return ScalarField(grid, R)


def laplace_beltrami_apply(g: MetricField, u: np.ndarray) -> np.ndarray:
    """Delta_g u by nested centered stencils of the divergence form.

    Matrix-free; used where assembling the sparse operator would be
    wasteful (large single-shot curvature checks).
    """
    grid, n = g.grid, g.n
    sdet = g.sqrt_det
    du = [diff_array(u, grid, a, 1) for a in range(n)]
    out = np.zeros(grid.shape)
    for i in range(n):
        flux = sdet * sum(g.inv[..., i, j] * du[j] for j in range(n))
        out += diff_array(flux, grid, i, 1)
    return out / sdet


def conformal_transform(g: MetricField, u) -> MetricField:
    """u^{4/(n-2)} g with caches rebuilt; u may be a ScalarField or array."""
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    if np.any(vals <= 0):
        raise PreconditionError("conformal factor must be positive")
    p = 4.0 / (g.n - 2)
    factor = vals**p
    new = TensorField(g.grid, factor[..., None, None] * g.values)
    out = MetricField(new, regularity=g.regularity)
    out._scan_done = g._scan_done  # positive factor preserves definiteness
    return out


# ---------------------------------------------------------------------------
# generators


def flat(grid) -> MetricField:
    n = grid.n
    vals = np.zeros(grid.shape + (n, n))
    for i in range(n):
        vals[..., i, i] = 1.0
    m = MetricField(TensorField(grid, vals))
    m._scan_done = True
    return m


def rough_torus(grid: TorusGrid, q: float, amplitude: float, seed: int,
                pin_pole: bool = False) -> MetricField:
    """delta + random-phase Fourier perturbation with spectrum |k|^-(2 + n/q + 0.1).

    The spectral slope places second derivatives marginally inside l^q
    summability (the +0.1 keeps tests off the borderline).  With pin_pole
    the perturbation and its gradient are cancelled at the origin node by
    subtracting smooth low-mode fields, realizing the normalized-chart
    condition g(0) = delta, dg(0) = 0 used by Green-function runs.
    """
    n = grid.n
    if q <= n / 2:
        raise PreconditionError(f"need q > n/2, got q = {q}")
    if amplitude > 0.2:
        raise PreconditionError("amplitude > 0.2 cannot be certified positive definite")
    alpha = 2.0 + n / q + 0.1
    rng = np.random.default_rng(seed)
    ks = [np.fft.fftfreq(d, 1.0 / d) for d in grid.dims]
    kk = np.meshgrid(*ks, indexing="ij")
    k2 = sum(k * k for k in kk)
    with np.errstate(divide="ignore"):
        ampl = np.where(k2 > 0, k2 ** (-alpha / 2.0), 0.0)
    vals = np.zeros(grid.shape + (n, n))
    for i in range(n):
        vals[..., i, i] = 1.0
    if amplitude > 0:
        pert = np.empty(grid.shape + (n, n))
        for i in range(n):
            for j in range(i, n):
                phase = rng.uniform(0.0, 2.0 * np.pi, size=grid.shape)
                spec = ampl * np.exp(1j * phase)
                comp = np.fft.ifftn(spec).real
                pert[..., i, j] = comp
                pert[..., j, i] = comp
        if pin_pole:
            origin = (0,) * n
            coords = grid.coords()
            for a in range(n):
                # smooth periodic field with s(0)=0, ds_b(0)=delta_ab
                La = grid.periods[a]
                s_a = (La / (2 * np.pi)) * np.sin(2 * np.pi * coords[..., a] / La)
                dpert_a = diff_array(pert, grid, a, 1)
                pert -= s_a[..., None, None] * dpert_a[origin]
            pert -= pert[origin]
        norms = np.linalg.norm(pert.reshape(-1, n * n), axis=1).max()
        pert *= amplitude / norms
        vals += pert
    m = MetricField(TensorField(grid, vals), regularity=f"rough({q:g})")
    m.certify_positive()
    return m


def sphere_chart(grid: ChartGrid) -> MetricField:
    """Stereographic round-sphere chart g_ij = (2/(1+|x|^2))^2 delta_ij."""

    def cb(x):
        r2 = np.sum(np.asarray(x) ** 2, axis=-1)
        w = (2.0 / (1.0 + r2)) ** 2
        out = np.zeros(np.shape(x)[:-1] + (3, 3))
        for i in range(3):
            out[..., i, i] = w
        return out

    vals = cb(grid.coords())
    m = MetricField(TensorField(grid, vals, callback=cb))
    m._scan_done = True
    return m


def conformally_flat_chart(grid: ChartGrid, W: Callable) -> MetricField:
    """g = W^4 delta for a caller-supplied positive conformal factor W(x)."""

    def cb(x):
        w = np.asarray(W(np.asarray(x))) ** 4
        out = np.zeros(np.shape(x)[:-1] + (3, 3))
        for i in range(3):
            out[..., i, i] = w
        return out

    wvals = np.asarray(W(grid.coords()))
    if np.any(wvals <= 0):
        raise PreconditionError("W must be positive")
    m = MetricField(TensorField(grid, cb(grid.coords()), callback=cb))
    m._scan_done = True
    return m


def generate(kind: str, grid=None, **params):
    """Metric generator front end; accepts the JSON parameter block fields."""
    if kind == "flat":
        return flat(grid)
    if kind == "rough_torus":
        return rough_torus(grid, q=params.get("q", 4.0),
                           amplitude=params.get("amplitude", 0.1),
                           seed=params.get("seed", 0),
                           pin_pole=params.get("pin_pole", False))
    if kind == "sphere_chart":
        return sphere_chart(grid)
    if kind == "conformally_flat_chart":
        return conformally_flat_chart(grid, params["W"])
    if kind == "as_callback":
        cb = ASMetricCallback(m_gen=params.get("m_gen", 1.0),
                              eps=params.get("eps", 0.5),
                              amplitude=params.get("amplitude", 0.0))
        if not cb.sampled_decay_ok():
            raise PreconditionError("AS callback fails its sampled decay check")
        return cb
    raise PreconditionError(f"unknown metric kind {kind!r}")
