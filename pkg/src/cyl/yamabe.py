"""Variational layer: Rayleigh quotients, Yamabe classification via the
first conformal eigenvalue, subcritical minimization, and continuation to
the critical exponent.

The descent direction is the gradient of the quotient in the W^{1,2}
inner product (an operator-preconditioned L^2 gradient, solved by FFT on
periodic grids), with Armijo backtracking on the L^s unit sphere and
nodal absolute-value projection after every step.  Both the minimizer and
the eigenvalue route act on the same assembled quadratic form, so the two
algorithms agree to solver tolerance when s = 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ScalarField
from .errors import PreconditionError, SolverError
from .metric import MetricField, conformal_transform, scalar_curvature
from . import elliptic

TWO_STAR = {n: 2.0 * n / (n - 2) for n in range(3, 9)}


@dataclass
class YamabeReport:
    s: float
    lam: float
    u: np.ndarray
    residual: float
    iterations: int
    classification: Optional[str] = None
    min_u: float = 0.0
    R_variance: Optional[float] = None
    lambda_trace: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({
            "s": self.s, "lambda": self.lam, "residual": self.residual,
            "iterations": self.iterations, "classification": self.classification,
            "min_u": self.min_u, "R_variance": self.R_variance,
        })


def _norm_s(u, w, s):
    return float(np.sum(w * np.abs(u) ** s) ** (1.0 / s))


def rayleigh(g: MetricField, u, s: float, op: Optional[object] = None) -> float:
    """Q_g^s(u) on the assembled quadratic form; |u| is taken nodally.

    The nodal absolute value realizes the exact identity Q(|u|) = Q(u)
    used by the direct method, and makes the quotient insensitive to the
    sign pattern of the input.
    """
    n = g.n
    if not (2.0 <= s <= TWO_STAR[n] + 1e-12):
        raise PreconditionError(f"s must lie in [2, 2*], got {s}")
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    vals = np.abs(vals).reshape(-1)
    if not np.any(vals > 0):
        raise PreconditionError("u must not vanish identically")
    if op is None:
        op = elliptic.assemble("conformal", g)
    w = op.mass
    E = float(vals @ (op.matrix @ vals))
    return E / _norm_s(vals, w, s) ** 2


@dataclass
class Classification:
    tag: str
    lambda2: float
    eigenfunction: np.ndarray
    gauge_metric: MetricField
    gauge_curvature: np.ndarray

    def __iter__(self):
        return iter((self.tag, self.lambda2))


def classify(g: MetricField, dead_band: float = 1e-8, tol: float = 1e-10,
             autoscale_band: bool = True) -> Classification:
    """Sign of the first conformal eigenvalue, with the eigenfunction gauge.

    The returned gauge metric phi^{4/(n-2)} g has scalar curvature
    lambda_2 phi^{-4/(n-2)}, continuous by construction.  The zero-class
    dead band starts at `dead_band` and, when the grid allows it, is
    rescaled by a Richardson estimate of the eigenvalue discretization
    error (a coarsened-grid comparison), since the discrete lambda_2 of a
    genuinely zero-class metric sits O(h^2) off zero.
    """
    op = elliptic.assemble("conformal", g)
    lam2, phi = elliptic.smallest_eigenpair(op, tol=tol)
    if autoscale_band and g.grid.periodic and all(d % 2 == 0 and d >= 16
                                                 for d in g.grid.dims):
        from .core import TorusGrid, TensorField
        coarse_grid = TorusGrid(g.n, tuple(d // 2 for d in g.grid.dims),
                                g.grid.periods)
        sl = tuple(slice(0, None, 2) for _ in range(g.n))
        g_c = MetricField(TensorField(coarse_grid, g.values[sl].copy()),
                          regularity=g.regularity)
        op_c = elliptic.assemble("conformal", g_c)
        lam2_c, _ = elliptic.smallest_eigenpair(op_c, tol=max(tol, 1e-9))
        dead_band = max(dead_band, 1.5 * abs(lam2 - lam2_c))
    phi_flat = phi.reshape(g.grid.shape)
    if phi_flat.min() <= 0:
        # first eigenfunction is single-signed; tiny undershoots are solver noise
        if phi_flat.min() < -1e-8 * np.abs(phi_flat).max():
            raise SolverError("first eigenfunction changed sign")
        phi_flat = np.maximum(phi_flat, 1e-12 * np.abs(phi_flat).max())
    if abs(lam2) <= dead_band:
        tag = "zero"
    else:
        tag = "positive" if lam2 > 0 else "negative"
    gauge = conformal_transform(g, phi_flat)
    p = 4.0 / (g.n - 2)
    gauge_R = lam2 * phi_flat ** (-p)
    return Classification(tag, lam2, phi_flat, gauge, gauge_R)


def _el_residual(A, w, u, q, s):
    """EL residual field M^{-1}Au - q u^{s-1} in the discrete L^2(dmu) norm."""
    r = (A @ u) / w - q * u ** (s - 1.0)
    return float(np.sqrt(np.sum(w * r * r))), r


def subcritical_minimize(g: MetricField, s: float, tol: float = 1e-8,
                         u0: Optional[np.ndarray] = None, max_iter: int = 2000,
                         op: Optional[object] = None) -> YamabeReport:
    """Minimize Q_g^s over the L^s(dmu) unit sphere for subcritical s.

    Preconditioned projected gradient descent with Armijo backtracking
    from the constant initial guess; iterates are replaced by their
    absolute value and renormalized after every step.
    """
    n = g.n
    if not (2.0 <= s < TWO_STAR[n] + 1e-9):
        raise PreconditionError(f"subcritical exponent must be in [2, 2*], got {s}")
    if op is None:
        op = elliptic.assemble("conformal", g)
    A, w = op.matrix, op.mass
    N = A.shape[0]

    pre = elliptic._fft_precond(op)
    shift = max(float(np.mean(np.abs(A.diagonal()) / w)) * 1e-3, 1e-6)

    def precondition(r):
        if pre is None:
            return r / (np.abs(A.diagonal()) + shift * w)
        sym_shift = op.grid.volume_element() * shift
        sym = op.fft_symbol + sym_shift
        rh = np.fft.fftn(r.reshape(op.grid.shape)) / sym
        return np.fft.ifftn(rh).real.reshape(-1)

    if u0 is None:
        u = np.ones(N)
    else:
        u = np.abs(np.asarray(u0, dtype=float).reshape(-1)) + 1e-30
    u = u / _norm_s(u, w, s)

    q = float(u @ (A @ u))
    res, _ = _el_residual(A, w, u, q, s)
    alpha = 1.0
    it = 0
    stalled = False
    res_window = res
    descent_cap = min(max_iter, 400)
    for it in range(1, descent_cap + 1):
        if res <= tol or stalled:
            break
        if it % 50 == 0:
            # no meaningful progress over the window: the polish phase
            # converges past the rounding floor of Q, hand over
            if res > 0.5 * res_window:
                break
            res_window = res
        grad = 2.0 * ((A @ u) - q * w * u ** (s - 1.0))
        d = precondition(grad)
        slope = float(grad @ d)
        if slope <= 0:
            d = grad
            slope = float(grad @ grad)
        accepted = False
        for _ in range(40):
            cand = np.abs(u - alpha * d)
            nrm = _norm_s(cand, w, s)
            if nrm == 0.0:
                alpha *= 0.5
                continue
            cand = cand / nrm
            q_cand = float(cand @ (A @ cand))
            if q_cand <= q - 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # Armijo progress is below the rounding floor of Q itself;
            # hand over to the fixed-point polish
            stalled = True
            continue
        u, q = cand, q_cand
        res, _ = _el_residual(A, w, u, q, s)
        alpha = min(alpha * 2.0, 1e3)

    if res > tol:
        u, q, res, polish_its = _el_fixed_point(op, u, q, s, tol)
        it += polish_its
    if res > tol:
        raise SolverError(f"subcritical solve did not reach tol "
                          f"(residual {res:.3e}, tol {tol:.1e})")
    return YamabeReport(s=s, lam=q, u=u.reshape(g.grid.shape), residual=res,
                        iterations=it, min_u=float(u.min()))


def _el_fixed_point(op, u, q, s, tol, sigma: float = 8.0, max_iter: int = 300):
    """Shifted fixed-point polish of the Euler-Lagrange equation.

    Iterates u <- normalize |(A + sigma M)^{-1} M (q u^{s-1} + sigma u)|;
    the Euler-Lagrange solution is a fixed point, and the shift damps the
    update into a contraction near it.  Unlike the Armijo phase this does
    not compare functional values, so it converges past the rounding
    floor of Q.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    A, w = op.matrix, op.mass
    S = (A + sigma * sp.diags(w)).tocsr()
    if op.fft_symbol is not None:
        sym = op.fft_symbol + sigma * op.grid.volume_element()
        shape = op.grid.shape

        def pre(r):
            return np.fft.ifftn(np.fft.fftn(r.reshape(shape)) / sym).real.reshape(-1)

        M_pre = spla.LinearOperator(S.shape, matvec=pre)
    else:
        M_pre = None
    res, _ = _el_residual(A, w, u, q, s)
    it = 0
    for it in range(1, max_iter + 1):
        if res <= tol:
            break
        rhs = w * (q * u ** (s - 1.0) + sigma * u)
        x, info = spla.cg(S, rhs, x0=u, rtol=1e-13, atol=0.0, M=M_pre,
                          maxiter=10 * len(u))
        if info != 0:
            raise SolverError("fixed-point inner solve failed")
        u = np.abs(x)
        u = u / _norm_s(u, w, s)
        q = float(u @ (A @ u))
        res, _ = _el_residual(A, w, u, q, s)
    return u, q, res, it


def critical_continuation(g: MetricField, eps0: float = 0.5, steps: int = 8,
                          tol: float = 1e-8, dead_band: float = 1e-8,
                          positive_certificate: Optional[float] = None,
                          max_iter: int = 4000,
                          autoscale_band: bool = True) -> YamabeReport:
    """Warm-started subcritical family s_j -> 2*, then the critical solve.

    Requires a non-positive classification, or a verified test-function
    certificate Q_g(test) below the round-sphere threshold for the
    positive class.  Emits the constant-scalar-curvature certificate: the
    relative variance of the scalar curvature of conformal_transform(g, u).
    """
    from .ae import sphere_yamabe_constant

    n = g.n
    two_star = TWO_STAR[n]
    cls = classify(g, dead_band=dead_band, autoscale_band=autoscale_band)
    if cls.tag == "positive":
        lam_s3 = sphere_yamabe_constant()
        if positive_certificate is None or positive_certificate >= lam_s3:
            raise PreconditionError(
                "positive class needs a certificate Q_g(test) < lambda(S^3) "
                f"= {lam_s3:.6f}")

    # volume normalization (a constant conformal change) so the
    # |lambda_s| monotonicity of the subcritical family applies verbatim
    op0 = elliptic.assemble("conformal", g)
    vol = float(op0.mass.sum())
    cvol = vol ** (-(n - 2.0) / (2.0 * n))
    g_n = conformal_transform(g, np.full(g.grid.shape, cvol))
    op = elliptic.assemble("conformal", g_n)

    schedule = [two_star - eps0 * 2.0 ** (-j) for j in range(steps)] + [two_star]
    u = None
    trace = []
    iterations = 0
    rep = None
    for s in schedule:
        rep = subcritical_minimize(g_n, s, tol=tol, u0=u, op=op,
                                   max_iter=max_iter)
        u = rep.u.reshape(-1)
        trace.append((s, rep.lam))
        iterations += rep.iterations
    u_final = rep.u
    if u_final.min() <= 0:
        raise SolverError("positivity loss of u at the critical exponent "
                          "(discrete bubbling)")

    u_total = cvol * u_final  # compose with the volume gauge
    g_final = conformal_transform(g, u_total)
    R_final = scalar_curvature(g_final).values
    w_final = g_final.sqrt_det * g.grid.volume_element()
    mean_R = float(np.sum(w_final * R_final) / np.sum(w_final))
    var_R = float(np.sqrt(np.sum(w_final * (R_final - mean_R) ** 2)
                          / np.sum(w_final)))
    rel_var = var_R / max(abs(mean_R), 1.0)
    out = YamabeReport(s=two_star, lam=rep.lam, u=u_total, residual=rep.residual,
                       iterations=iterations, classification=cls.tag,
                       min_u=float(u_total.min()), R_variance=rel_var,
                       lambda_trace=trace)
    return out
