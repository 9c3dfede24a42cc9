"""Symbolic Sobolev-exponent calculus, weighted norms and decay fitting.

Exponent bookkeeping is done with exact rationals (`fractions.Fraction`)
so that strict vs non-strict inequalities at branch boundaries are decided
without floating-point ambiguity.  Integrability p = math.inf is allowed
where the multiplication conditions permit it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import PreconditionError, RankDeficiencyError

Rat = Fraction
INF = math.inf


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        if math.isinf(x):
            raise ValueError("use math.inf only for p, not k or delta")
        return Fraction(x).limit_denominator(10**9)
    return Fraction(x)


def _inv(p) -> Fraction:
    """1/p as an exact rational, with 1/inf = 0."""
    if p == INF:
        return Fraction(0)
    return 1 / _frac(p)


@dataclass(frozen=True)
class SobolevSpec:
    """(regularity k, integrability p, dimension n, optional weight delta)."""

    k: Fraction
    p: object  # Fraction or math.inf
    n: int
    delta: Optional[Fraction] = None

    def __post_init__(self):
        object.__setattr__(self, "k", _frac(self.k))
        if self.p != INF:
            object.__setattr__(self, "p", _frac(self.p))
            if self.p <= 1:
                raise PreconditionError(f"integrability must satisfy p > 1, got {self.p}")
        if self.n < 3:
            raise PreconditionError(f"dimension must satisfy n >= 3, got {self.n}")
        if self.delta is not None:
            object.__setattr__(self, "delta", _frac(self.delta))

    def __str__(self):
        w = f"_{self.delta}" if self.delta is not None else ""
        p = "inf" if self.p == INF else str(self.p)
        return f"W^{{{self.k},{p}}}{w}(n={self.n})"


@dataclass
class Decision:
    """Outcome of a predicate, with the inequality trace that certified it."""

    valid: bool
    branch: Optional[str] = None
    trace: list = field(default_factory=list)
    reason: str = ""

    def __bool__(self):
        return self.valid


def _ineq(lhs: Fraction, op: str, rhs: Fraction, label: str):
    ok = {"<": lhs < rhs, "<=": lhs <= rhs, ">": lhs > rhs, ">=": lhs >= rhs}[op]
    return ok, f"{label}: {lhs} {op} {rhs} [{'ok' if ok else 'fails'}]"


def mult_valid(s1: SobolevSpec, s2: SobolevSpec, target: SobolevSpec) -> Decision:
    """Decide the product embedding W^{k1,p1} x W^{k2,p2} -> W^{k,p}.

    Evaluates both alternative condition sets: branch "a" pairs the
    non-strict per-factor gap with a strict joint gap, branch "b" swaps
    strict and non-strict.  When min(k1,k2) < 0 the additional side
    condition on k1+k2 (non-strict for branch a, strict for branch b,
    and p_i < inf) is enforced.
    """
    if s1.n != s2.n or s1.n != target.n:
        raise PreconditionError("dimension mismatch")
    n = Fraction(s1.n)
    k1, k2, k = s1.k, s2.k, target.k
    if k1 + k2 < 0:
        raise PreconditionError(f"requires k1 + k2 >= 0, got {k1 + k2}")
    if k1 < k or k2 < k:
        raise PreconditionError(f"requires k1, k2 >= k, got ({k1}, {k2}) vs {k}")

    ip1, ip2, ip = _inv(s1.p), _inv(s2.p), _inv(target.p)
    gap1 = k1 - k - n * (ip1 - ip)
    gap2 = k2 - k - n * (ip2 - ip)
    joint = k1 + k2 - k - n * (ip1 + ip2 - ip)
    side = k1 + k2 - n * (ip1 + ip2 - 1)
    negative_order = min(k1, k2) < 0

    def try_branch(name, per_op, joint_op, side_op):
        trace = []
        ok = True
        for i, gap in ((1, gap1), (2, gap2)):
            good, line = _ineq(gap, per_op, Fraction(0), f"k{i}-k-n(1/p{i}-1/p)")
            trace.append(line)
            ok = ok and good
        good, line = _ineq(joint, joint_op, Fraction(0), "k1+k2-k-n(1/p1+1/p2-1/p)")
        trace.append(line)
        ok = ok and good
        if negative_order:
            if s1.p == INF or s2.p == INF:
                trace.append("negative order requires p_i < inf [fails]")
                ok = False
            good, line = _ineq(side, side_op, Fraction(0), "k1+k2-n(1/p1+1/p2-1)")
            trace.append(line)
            ok = ok and good
        return ok, trace

    ok_a, tr_a = try_branch("a", ">=", ">", ">=")
    if ok_a:
        return Decision(True, branch="a", trace=tr_a)
    ok_b, tr_b = try_branch("b", ">", ">=", ">")
    if ok_b:
        return Decision(True, branch="b", trace=tr_b)
    return Decision(False, trace=tr_a + tr_b, reason="neither branch certifies the product")


@dataclass
class EmbedTarget:
    """Result of embed_target: a Hoelder or Lebesgue target plus endpoint flags."""

    kind: str  # "holder" | "lebesgue" | "borderline"
    m: Optional[int] = None
    alpha: Optional[Fraction] = None
    p_star: Optional[Fraction] = None  # None means unbounded (every finite exponent)
    endpoint_open: bool = False

    def __str__(self):
        if self.kind == "holder":
            s = f"C^{{{self.m},{self.alpha}}}"
            return s + (" (open endpoint)" if self.endpoint_open else "")
        if self.kind == "borderline":
            return "L^p for every finite p (borderline, no Hoelder)"
        return f"L^{{{self.p_star}}}"


def embed_target(k, q, n: int) -> EmbedTarget:
    """Sobolev embedding target of W^{k,q} in dimension n.

    Supercritical k > n/q gives C^{m,alpha} with m = floor(k - n/q); at an
    integer gap the Hoelder endpoint is flagged open rather than thrown.
    Critical kq = n gives every finite Lebesgue exponent; subcritical gives
    L^{p*} with 1/p* = 1/q - k/n.
    """
    k = _frac(k)
    if _frac(q) <= 1:
        raise PreconditionError("q > 1 required")
    n_ = Fraction(n)
    gap = k - n_ * _inv(q)
    if gap > 0:
        m = int(math.floor(gap)) if gap != int(gap) else int(gap)
        alpha = gap - m
        if alpha == 0:
            # integer gap: C^{m,0} endpoint is open; certified target is C^{m-1,1-}
            return EmbedTarget("holder", m=m - 1, alpha=Fraction(1), endpoint_open=True)
        return EmbedTarget("holder", m=m, alpha=alpha)
    if gap == 0:
        return EmbedTarget("borderline", p_star=None)
    inv_star = _inv(q) - k / n_
    return EmbedTarget("lebesgue", p_star=1 / inv_star)


def weighted_embed_valid(source: SobolevSpec, target: SobolevSpec) -> Decision:
    """Weighted-space embedding on an AE end, decided clause by clause.

    Clause (i): L^q_{d2} -> L^p_{d1} needs p <= q and d2 < d1 strictly.
    Clauses (ii)/(iii): same weight, kp < n (resp. = n) Lebesgue targets.
    Clause (iv): kp > n gives W^{k+l,p}_d -> C^l_d (target encoded with
    p = inf and k = l).
    """
    if source.delta is None or target.delta is None:
        raise PreconditionError("weighted_embed_valid requires weights on both specs")
    n = Fraction(source.n)
    tr = []

    if source.k == 0 and target.k == 0 and target.p != INF:
        ok1 = target.p <= source.p and source.p != INF
        ok2 = source.delta < target.delta
        tr.append(f"(i): p={target.p} <= q={source.p} [{'ok' if ok1 else 'fails'}]")
        tr.append(f"(i): delta2={source.delta} < delta1={target.delta} "
                  f"[{'ok' if ok2 else 'fails'}]")
        if ok1 and ok2:
            return Decision(True, branch="i", trace=tr)

    if target.p == INF:
        # clause (iv): W^{k+l,p}_delta -> C^l_delta
        l = target.k
        kk = source.k - l
        ok = (kk * source.p > n) and source.delta == target.delta and kk > 0
        tr.append(f"(iv): (k-l)p = {kk * source.p if source.p != INF else 'inf'} > n = {n} "
                  f"and equal weights [{'ok' if ok else 'fails'}]")
        return Decision(bool(ok), branch="iv" if ok else None, trace=tr)

    if source.delta == target.delta and source.k > 0 and target.k == 0:
        kp = source.k * source.p if source.p != INF else INF
        if kp != INF and kp < n:
            hi = n * source.p / (n - source.k * source.p)
            ok = source.p <= target.p <= hi
            tr.append(f"(ii): kp={kp} < n; p <= q <= np/(n-kp) = {hi} "
                      f"[{'ok' if ok else 'fails'}]")
            if ok:
                return Decision(True, branch="ii", trace=tr)
        elif kp == n:
            ok = target.p >= source.p and target.p != INF
            tr.append(f"(iii): kp = n; any finite q >= p [{'ok' if ok else 'fails'}]")
            if ok:
                return Decision(True, branch="iii", trace=tr)

    return Decision(False, trace=tr, reason="no clause applies")


def weighted_mult_valid(s1: SobolevSpec, s2: SobolevSpec, target: SobolevSpec) -> Decision:
    """Clause (v): W^{k1,p}_{d1} x W^{k2,q}_{d2} -> W^{k,p}_d, d > d1+d2 strictly."""
    for s in (s1, s2, target):
        if s.delta is None:
            raise PreconditionError("clause (v) requires weights")
    n = Fraction(s1.n)
    k1, k2, k = s1.k, s2.k, target.k
    tr = []
    ok_orders = k1 >= k and k2 >= k and k1 >= 0 and k2 >= 0
    tr.append(f"(v): k1,k2 >= k >= 0 [{'ok' if ok_orders else 'fails'}]")
    ok_p = s1.p != INF and s2.p != INF and s1.p <= s2.p and target.p == s1.p
    tr.append(f"(v): 1 < p <= q < inf, target carries p [{'ok' if ok_p else 'fails'}]")
    ok_gap = k1 + k2 > n * _inv(s2.p) + k
    tr.append(f"(v): k1+k2 = {k1 + k2} > n/q + k = {n * _inv(s2.p) + k} "
              f"[{'ok' if ok_gap else 'fails'}]")
    ok_w = target.delta > s1.delta + s2.delta
    tr.append(f"(v): delta = {target.delta} > delta1+delta2 = {s1.delta + s2.delta} "
              f"(strict) [{'ok' if ok_w else 'fails'}]")
    ok = ok_orders and ok_p and ok_gap and ok_w
    return Decision(bool(ok), branch="v" if ok else None, trace=tr)


# ---------------------------------------------------------------------------
# weighted norms on an exterior region


def weighted_norm(u: Callable, spec: SobolevSpec, r_inner: float = 1.0,
                  grad: Optional[Callable] = None, hess: Optional[Callable] = None,
                  rtol: float = 1e-8, max_shells: int = 60) -> float:
    """Weighted Sobolev norm of u over the exterior |x| >= r_inner.

    Computes sum over |beta| <= k of the L^p norm of
    sigma^{-delta - n/p + |beta|} d^beta u with sigma = (1+|x|^2)^(1/2),
    by radial Gauss-Legendre x sphere quadrature over dyadic shells.
    Derivative callbacks are optional; missing ones fall back to central
    differences with a radius-scaled step.

    Raises SolverError-style divergence when shell contributions grow for
    several consecutive dyadic shells.
    """
    from .core.quadrature import SphereQuadrature, sphere_nodes
    from .errors import SolverError

    if spec.delta is None:
        raise PreconditionError("weighted_norm needs a weight delta")
    if spec.k not in (0, 1, 2):
        raise PreconditionError("weighted_norm supports k in {0,1,2}")
    if spec.p == INF:
        raise PreconditionError("weighted_norm requires finite p")
    n = spec.n
    if n != 3:
        raise PreconditionError("exterior quadrature implemented at n = 3")
    p = float(spec.p)
    delta = float(spec.delta)
    k = int(spec.k)

    quad = SphereQuadrature(order=12)
    dirs, wq = sphere_nodes(quad)

    def derivs(x):
        vals = [np.asarray(u(x))]
        if k >= 1:
            if grad is not None:
                vals.append(np.asarray(grad(x)))
            else:
                step = 1e-5 * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))
                g = np.empty(x.shape)
                for i in range(n):
                    e = np.zeros(n)
                    e[i] = 1.0
                    g[:, i] = (u(x + step * e) - u(x - step * e))[:] / (2 * step[:, 0])
                vals.append(g)
        if k >= 2:
            if hess is not None:
                vals.append(np.asarray(hess(x)))
            else:
                step = 1e-4 * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))
                H = np.empty(x.shape + (n,))
                f0 = vals[0]
                for i in range(n):
                    ei = np.zeros(n)
                    ei[i] = 1.0
                    for j in range(i, n):
                        ej = np.zeros(n)
                        ej[j] = 1.0
                        s = step[:, 0]
                        if i == j:
                            H[:, i, i] = (u(x + step * ei) - 2 * f0 + u(x - step * ei)) / s**2
                        else:
                            H[:, i, j] = (u(x + step * (ei + ej)) - u(x + step * (ei - ej))
                                          - u(x - step * (ei - ej)) + u(x - step * (ei + ej))
                                          ) / (4 * s**2)
                            H[:, j, i] = H[:, i, j]
                vals.append(H)
        return vals

    # 8-point Gauss-Legendre in radius per dyadic shell
    gl_x, gl_w = np.polynomial.legendre.leggauss(8)
    total_p = np.zeros(k + 1)
    prev = None
    grow = 0
    for j in range(max_shells):
        a, b = r_inner * 2.0**j, r_inner * 2.0**(j + 1)
        r = 0.5 * (b - a) * gl_x + 0.5 * (a + b)
        wr = 0.5 * (b - a) * gl_w
        shell = np.zeros(k + 1)
        for ri, wi in zip(r, wr):
            x = ri * dirs
            sigma = np.sqrt(1.0 + ri * ri)
            vals = derivs(x)
            for order in range(k + 1):
                v = vals[order]
                mag_p = np.sum(np.abs(v.reshape(v.shape[0], -1))**p, axis=1)
                w_fac = sigma ** (-(delta + n / p - order) * p)
                shell[order] += wi * ri**(n - 1) * np.dot(wq, mag_p * w_fac)
        total_p += shell
        contrib = shell.sum()
        if prev is not None:
            if contrib > prev * 1.0001:
                grow += 1
                if grow >= 3:
                    raise SolverError("weighted_norm: divergent tail "
                                      f"(shell contributions grow, last {contrib:.3e})")
            else:
                grow = 0
            if contrib <= rtol * max(total_p.sum(), 1e-300):
                break
        prev = contrib
    return float(np.sum(total_p ** (1.0 / p)))


# ---------------------------------------------------------------------------
# decay fitting


@dataclass
class DecayFit:
    exponent: float
    constant: float        # A for power_plus_constant, C for power
    coef: Optional[float]  # C for power_plus_constant, None for power
    residual: float


def decay_fit(samples: Sequence, model: str = "power") -> DecayFit:
    """Fit (radius, value) samples to C r^sigma or A + C r^sigma.

    The pure power model is a log-log least squares.  The shifted model
    profiles out (A, C) by linear least squares and minimizes over sigma
    with a deterministic bracket built from endpoint slopes.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise PreconditionError("samples must be (radius, value) pairs")
    r, v = pts[:, 0], pts[:, 1]
    if len(np.unique(r)) < 3:
        raise PreconditionError("need >= 3 distinct radii")
    order = np.argsort(r)
    r, v = r[order], v[order]

    if model == "power":
        if np.any(v <= 0):
            sign = -1.0 if np.all(v < 0) else None
            if sign is None:
                raise RankDeficiencyError("power model needs one-signed values")
            v = -v
        else:
            sign = 1.0
        logs = np.log(v)
        if np.ptp(logs) < 1e-12:
            raise RankDeficiencyError("constant samples carry no power-law information")
        A = np.column_stack([np.ones_like(r), np.log(r)])
        coef, res, *_ = np.linalg.lstsq(A, logs, rcond=None)
        fitted = A @ coef
        resid = float(np.sqrt(np.mean((logs - fitted) ** 2)))
        C = math.exp(coef[0]) * (sign if sign else 1.0)
        return DecayFit(exponent=float(coef[1]), constant=C, coef=None, residual=resid)

    if model != "power_plus_constant":
        raise PreconditionError(f"unknown model {model!r}")

    def profiled(sigma):
        basis = np.column_stack([np.ones_like(r), r**sigma])
        sol, *_ = np.linalg.lstsq(basis, v, rcond=None)
        resid = v - basis @ sol
        return float(np.dot(resid, resid)), sol

    # deterministic bracket from endpoint slopes of successive differences
    dv = np.diff(v)
    if np.max(np.abs(dv)) < 1e-14 * max(1.0, np.max(np.abs(v))):
        raise RankDeficiencyError("values are constant: sigma not identifiable")
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = np.log(np.abs(dv[1:]) / np.abs(dv[:-1])) / np.log(r[2:] / r[:-2])
    slopes = slopes[np.isfinite(slopes)]
    guess = float(np.median(slopes)) if len(slopes) else -1.0
    lo, hi = guess - 4.0, guess + 4.0
    # golden-section refinement of the profiled residual
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, _ = profiled(c)
    fd, _ = profiled(d)
    for _ in range(160):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc, _ = profiled(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd, _ = profiled(d)
        if b - a < 1e-12:
            break
    sigma = 0.5 * (a + b)
    rss, sol = profiled(sigma)
    return DecayFit(exponent=float(sigma), constant=float(sol[0]), coef=float(sol[1]),
                    residual=float(math.sqrt(rss / len(r))))


# ---------------------------------------------------------------------------
# regularity ladders


@dataclass
class LadderTrace:
    recurrence: str
    exponents: list
    termination: str
    steps: int
    crossings: dict = field(default_factory=dict)

    def crossed(self, level) -> Optional[int]:
        level = _frac(level)
        for i, p in enumerate(self.exponents):
            if p >= level:
                return i
        return None


def regularity_ladder(recurrence: str, p0, target, n: int, q=None,
                      stop_at_boundaries: bool = False,
                      max_steps: int = 10_000) -> LadderTrace:
    """Iterate an exponent recurrence until the target integrability is reached.

    "sobolev_step" uses 1/p_{i+1} = 1/p_i - 1/n; "schroedinger_step" uses
    1/p_{i+1} = 1/p_i + 1/q - 2/n and requires q > n/2 so the step
    contracts.  The bootstraps' case boundaries p >= n/2 and p >= n are
    recorded when newly crossed; with stop_at_boundaries they terminate
    the ladder (the "we are done" clauses), otherwise the target does.
    """
    p = _frac(p0)
    tgt = _frac(target)
    n_ = Fraction(n)
    if recurrence == "sobolev_step":
        step = Fraction(1, n)
        rec_id = "1/p_{i+1} = 1/p_i - 1/n"
    elif recurrence == "schroedinger_step":
        if q is None:
            raise PreconditionError("schroedinger_step requires q")
        qf = _frac(q)
        step = Fraction(2, n) - 1 / qf
        rec_id = "1/p_{i+1} = 1/p_i + 1/q - 2/n"
        if step <= 0:
            raise PreconditionError(
                f"non-contracting recurrence: q = {qf} <= n/2 = {n_ / 2}")
    else:
        raise PreconditionError(f"unknown recurrence {recurrence!r}")

    seq = [p]
    crossings = {}
    termination = None
    for _ in range(max_steps):
        if p >= tgt:
            termination = "target"
            break
        prev = p
        inv_next = 1 / p - step
        if inv_next <= 0:
            termination = "exponent blew past infinity"
            break
        p = 1 / inv_next
        seq.append(p)
        for name, level in (("p>=n/2", n_ / 2), ("p>=n", n_)):
            if name not in crossings and prev < level <= p:
                crossings[name] = len(seq) - 1
                if stop_at_boundaries and p < tgt:
                    termination = name
        if termination is not None:
            break
    if termination is None:
        if p >= tgt:
            termination = "target"
        else:
            raise PreconditionError("ladder did not terminate within max_steps")
    return LadderTrace(recurrence=rec_id, exponents=seq, termination=termination,
                       steps=len(seq) - 1, crossings=crossings)


def ladder_step_count(p0, target, step) -> int:
    """Closed-form ceiling for the number of contraction steps."""
    p0, target, step = _frac(p0), _frac(target), _frac(step)
    gap = 1 / p0 - 1 / target
    if gap <= 0:
        return 0
    return int(math.ceil(gap / step))


# ---------------------------------------------------------------------------
# named constants


def constants(n: int) -> dict:
    """The dimension constants: a_n, b_n, 2*, |S^{n-1}|.

    a_n = 4(n-1)/(n-2) and 2* = 2n/(n-2) are exact rationals;
    b_n = 1/(4(n-1)|S^{n-1}|) and omega_{n-1} = 2 pi^{n/2}/Gamma(n/2) are
    floats.  They satisfy a_n b_n (n-2) omega_{n-1} = 1, the normalization
    that makes -a_n Delta (b_n |x|^{2-n}) a unit point source.
    """
    if n < 3:
        raise PreconditionError("n >= 3 required")
    a_n = Fraction(4 * (n - 1), n - 2)
    two_star = Fraction(2 * n, n - 2)
    omega = 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)
    b_n = 1.0 / (4.0 * (n - 1) * omega)
    return {"a_n": a_n, "b_n": b_n, "two_star": two_star, "omega": omega}
