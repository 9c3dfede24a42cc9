"""Command-line front end: configuration, experiment drivers, result emission.

One command per process.  Numeric libraries are imported only after the
thread env is pinned, so re-running a command with the same config and
seed reproduces every emitted number bitwise at any --threads value (the
flag caps batch-level parallel width only; all numerics run single
threaded).

Exit codes: 0 success, 1 schema violation, 2 precondition error,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys


def _pin_threads(k: int):
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    os.environ["CYL_BATCH_WIDTH"] = str(max(1, k))


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _emit(cfg: dict, results: dict, out_dir) -> dict:
    from .ae import sphere_yamabe_constant
    tables = results.pop("_tables", {})
    summary = {
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "lambda_s3": sphere_yamabe_constant(),
        "results": results,
    }
    text = json.dumps(summary, indent=2, sort_keys=True)
    print(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            fh.write(text + "\n")
        for name, rows in tables.items():
            import csv
            with open(os.path.join(out_dir, name), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                # metadata row so every emitted file is traceable
                w.writerow(["config_hash", summary["config_hash"],
                            "lambda_s3", repr(summary["lambda_s3"])])
                for row in rows:
                    w.writerow([repr(v) if isinstance(v, float) else v
                                for v in row])
    return summary


# ---------------------------------------------------------------------------
# metric construction from a config block


def _build_metric(cfg):
    import numpy as np
    from .core import cube, ChartGrid
    from . import metric as M

    kind = cfg.get("metric", "flat")
    dims = int(cfg.get("dims", 24))
    seed = int(cfg.get("seed", 0))
    if kind == "flat":
        return M.flat(cube(3, dims, 2 * np.pi))
    if kind == "rough_torus":
        return M.rough_torus(cube(3, dims, 2 * np.pi), q=float(cfg.get("q", 4.0)),
                             amplitude=float(cfg.get("amplitude", 0.1)),
                             seed=seed, pin_pole=bool(cfg.get("pin_pole", False)))
    if kind == "conformal_flat":
        g = cube(3, dims, 2 * np.pi)
        x = g.coords()
        amp = float(cfg.get("amplitude", 0.15))
        v = np.exp(amp * np.sin(x[..., 0]) * np.cos(x[..., 1]))
        return M.conformal_transform(M.flat(g), v)
    if kind == "sphere_chart":
        grid = ChartGrid(3, float(cfg.get("radius", 1.0)), (dims,) * 3)
        return M.sphere_chart(grid)
    raise _schema(f"unknown metric kind {kind!r}")


def _schema(msg):
    from .errors import SchemaError
    return SchemaError(msg)


# ---------------------------------------------------------------------------
# runners (each returns a results dict; optional "convergence_metric")


def run_yamabe_classify(cfg):
    from . import yamabe
    g = _build_metric(cfg)
    cls = yamabe.classify(g, dead_band=float(cfg.get("dead_band", 1e-8)))
    return {"classification": cls.tag, "lambda2": cls.lambda2}


def run_yamabe_solve(cfg):
    from . import yamabe
    g = _build_metric(cfg)
    rep = yamabe.subcritical_minimize(g, float(cfg.get("s", 4.0)),
                                      tol=float(cfg.get("tol", 1e-8)))
    return json.loads(rep.to_json())


def run_yamabe_continuation(cfg):
    import numpy as np
    from . import yamabe
    g = _build_metric(cfg)
    rep = yamabe.critical_continuation(g, tol=float(cfg.get("tol", 1e-8)))
    out = json.loads(rep.to_json())
    out["lambda_trace"] = rep.lambda_trace
    if cfg.get("metric") == "conformal_flat":
        grid = g.grid
        x = grid.coords()
        amp = float(cfg.get("amplitude", 0.15))
        v = np.exp(amp * np.sin(x[..., 0]) * np.cos(x[..., 1]))
        uv = rep.u * v
        out["flat_recovery_dev"] = float(np.abs(uv / uv.mean() - 1.0).max())
        out["convergence_metric"] = out["flat_recovery_dev"]
    return out


def run_green_solve(cfg):
    import numpy as np
    from . import green
    target = cfg.get("target", "torus")
    dims = int(cfg.get("dims", 32))
    if target == "torus":
        from .core import cube
        grid = cube(3, dims, 2 * np.pi)
        gmet = None
        if cfg.get("metric") == "rough_torus":
            from . import metric as M
            gmet = M.rough_torus(grid, q=float(cfg.get("q", 4.0)),
                                 amplitude=float(cfg.get("amplitude", 0.1)),
                                 seed=int(cfg.get("seed", 0)), pin_pole=True)
        res = green.green_solve_torus(grid, float(cfg.get("c", 6.0)), g=gmet,
                                      tol=float(cfg.get("tol", 1e-11)))
        out = json.loads(res.to_json())
        if gmet is None and cfg.get("compare_oracle", True):
            oracle = green.torus_spectral_green(grid, float(cfg.get("c", 6.0)))
            Gv, _ = res.g_values()
            rel = green._wrap_rel(grid.coords().copy(), res.pole_xyz, grid.periods)
            r = np.linalg.norm(rel, axis=-1)
            sel = r >= 4.0 * max(grid.spacing)
            err = float(np.sqrt(np.sum((Gv[sel] - oracle[sel]) ** 2)
                                / np.sum(oracle[sel] ** 2)))
            out["oracle_rel_l2"] = err
            out["convergence_metric"] = err
        return out
    raise _schema(f"unknown green target {target!r}")


def run_green_fit(cfg):
    import numpy as np
    from . import green
    oracle = cfg.get("oracle", "euclidean")
    dims = int(cfg.get("dims", 33))
    if oracle == "euclidean":
        res, _ = green.euclidean_chart_oracle(dims=dims,
                                              A_const=float(cfg.get("aconst", 0.0)))
        truth = float(cfg.get("aconst", 0.0))
    elif oracle == "sphere":
        res, _ = green.sphere_chart_oracle(dims=dims)
        truth = 0.0
    elif oracle == "conformally-flat":
        from .core import ChartGrid
        grid = ChartGrid(3, 1.0, (dims,) * 3)
        amp = float(cfg.get("amplitude", 0.1))

        def U(x):
            r2 = np.sum(np.asarray(x) ** 2, axis=-1)
            return 1.0 + amp * np.exp(-((np.sqrt(r2) - 0.45) / 0.12) ** 2)

        res, _ = green.conformally_flat_chart_oracle(
            grid, U, A_const=float(cfg.get("aconst", 0.05)))
        truth = float(cfg.get("aconst", 0.05))
    else:
        raise _schema(f"unknown oracle {oracle!r}")
    out = json.loads(res.to_json())
    out["A_expected"] = truth
    out["convergence_metric"] = abs(out["A"] - truth)
    return out


def run_green_blowup(cfg):
    import numpy as np
    from .core import ChartGrid
    from . import green, elliptic
    dims = int(cfg.get("dims", 33))
    case = cfg.get("case", "i")
    grid = ChartGrid(3, 1.0, (dims,) * 3)
    x = grid.coords()

    def a_field(pts):
        s = 1.0 + 0.3 * np.sin(1.3 * pts[..., 0]) * np.cos(0.8 * pts[..., 1])
        out = np.zeros(pts.shape[:-1] + (3, 3))
        for i in range(3):
            out[..., i, i] = s
        return out

    from .core import TensorField
    a = TensorField(grid, a_field(x))
    coeffs = elliptic.EllipticCoeffs(a=a, c=np.ones(grid.shape), lam_ell=0.6)

    if case == "i":
        p = float(cfg.get("p", 6.0))
        gamma = float(cfg.get("gamma", 2.0 + 3.0 / p - 0.1))
        spec = green.BlowupSpec(coeffs, gamma=gamma, p=p, case="i")
        alpha = 3.0 / p

        def u_exact(pts):
            r = np.linalg.norm(np.atleast_2d(pts), axis=-1)
            return r ** (-alpha)

        def f_rhs(pts):
            pts = np.atleast_2d(pts)
            r = np.linalg.norm(pts, axis=-1)
            xh = pts / r[:, None]
            s = 1.0 + 0.3 * np.sin(1.3 * pts[..., 0]) * np.cos(0.8 * pts[..., 1])
            # a^{ij} d_i d_j r^-alpha = s * trace(d2 u) for the scalar field a = s*delta
            lap = alpha * (alpha + 1.0) * r ** (-alpha - 2.0) \
                - 2.0 * alpha * r ** (-alpha - 2.0)
            return s * lap + u_exact(pts)
    else:
        beta = float(cfg.get("beta", 0.5))
        gamma = float(cfg.get("gamma", 2.0 - beta))
        spec = green.BlowupSpec(coeffs, gamma=gamma, beta=beta, case="ii")

        def u_exact(pts):
            r = np.linalg.norm(np.atleast_2d(pts), axis=-1)
            return 1.0 + r**beta

        def f_rhs(pts):
            pts = np.atleast_2d(pts)
            r = np.linalg.norm(pts, axis=-1)
            s = 1.0 + 0.3 * np.sin(1.3 * pts[..., 0]) * np.cos(0.8 * pts[..., 1])
            lap = beta * (beta + 1.0) * r ** (beta - 2.0)
            return s * lap + u_exact(pts)

    report = green.blowup_rate_scan(spec, u_exact, f_rhs,
                                    levels=int(cfg.get("levels", 3)))
    return report


def _mass_chart(cfg):
    from . import ae
    from .metric import ASMetricCallback
    kind = cfg.get("chart", "as")
    if kind == "as":
        cb = ASMetricCallback(m_gen=float(cfg.get("m", 1.0)),
                              eps=float(cfg.get("eps", 0.5)),
                              amplitude=float(cfg.get("amplitude", 0.3)))
        return ae.as_chart(cb, r0=2.0)
    if kind == "schwarzschild-2m":
        return ae.schwarzschild_chart(float(cfg.get("m", 1.0)), "2m")
    if kind == "schwarzschild-4A":
        return ae.schwarzschild_chart(float(cfg.get("m", 1.0)), "4A")
    if kind == "flat":
        return ae.flat_chart()
    raise _schema(f"unknown chart {kind!r}")


def _parse_radii(spec, default=(20.0, 200.0), count=8):
    import numpy as np
    if spec is None:
        lo, hi = default
    else:
        lo, hi = (float(t) for t in str(spec).split(":"))
    return list(np.geomspace(lo, hi, count))


def run_mass_adm(cfg):
    from . import ae
    chart = _mass_chart(cfg)
    radii = _parse_radii(cfg.get("radii"))
    rep = ae.decay_report(chart, radii)
    mrep = ae.adm_mass(chart, radii, beta_hat=rep["beta_hat"])
    table = [["radius", "adm_integral"]] + [
        [r, v] for r, v in zip(mrep.radii, mrep.adm_values)]
    return {"adm": mrep.adm, "adm_values": mrep.adm_values, "radii": mrep.radii,
            "A_lead": rep["A_lead"], "beta_hat": rep["beta_hat"],
            "convergence_metric": abs(mrep.adm - 2.0 * float(cfg.get("m", 1.0)))
            if cfg.get("chart", "as") in ("as", "schwarzschild-4A") else None,
            "_tables": {"adm_integrals.csv": table}}


def run_mass_lef(cfg):
    import numpy as np
    from . import ae
    chart = _mass_chart(cfg)
    radii = _parse_radii(cfg.get("radii"), default=(100.0, 2000.0))
    rep = ae.decay_report(chart, list(np.geomspace(20, 400, 8)))
    lef = ae.lef_mass(chart, rho_grid=radii[:6],
                      eps_grid=[0.02 * radii[0], 0.05 * radii[0]],
                      beta_hat=rep["beta_hat"])
    return {"lef": lef, "beta_hat": rep["beta_hat"]}


def run_mass_chain(cfg):
    import numpy as np
    from . import ae, green
    oracle = cfg.get("oracle", "sphere")
    dims = int(cfg.get("dims", 33))
    if oracle == "sphere":
        res, g = green.sphere_chart_oracle(dims=dims)
        expected_A = 0.0
    elif oracle == "flat-const":
        res, g = green.euclidean_chart_oracle(dims=dims,
                                              A_const=float(cfg.get("aconst", 0.05)))
        expected_A = float(cfg.get("aconst", 0.05)) / res.B
    else:
        raise _schema(f"unknown chain oracle {oracle!r}")
    chart = ae.decompactify(g, res)
    radii = list(np.geomspace(2.0 * chart.r0, 30.0 * chart.r0, 8))
    rep = ae.decay_report(chart, radii)
    adm = ae.adm_mass(chart, radii, beta_hat=rep["beta_hat"])
    A_fit = res.A / res.B
    return {"A_fit": A_fit, "A_lead": rep["A_lead"], "adm": adm.adm,
            "expected_A": expected_A,
            "consistency": adm.adm / (2 * A_fit) if abs(A_fit) > 1e-9 else None,
            "convergence_metric": abs(adm.adm - 2 * expected_A)}


def run_bubble_energy(cfg):
    from . import ae
    chart = _mass_chart({"chart": cfg.get("chart", "flat"), **cfg})
    a_grid = [float(t) for t in str(cfg.get("a_grid", "10,30,100,300")).split(",")]
    out = ae.bubble_test_energy(chart, a_grid, R=float(cfg.get("R", chart.r0)))
    return out


def run_bubble_lemma(cfg):
    from . import ae
    table = ae.integral_bound_table(R=float(cfg.get("R", 1.0)))
    return {"table": {f"a={a},k={k}": v for (a, k), v in table.items()},
            "max": max(table.values())}


def run_sobolev_check(cfg):
    from .funcspaces import SobolevSpec, mult_valid
    from fractions import Fraction
    import re
    n = int(cfg.get("n", 3))
    expr = cfg.get("mult")
    if not expr:
        raise _schema("sobolev check needs --mult \"W^{k,p}*W^{k,p}->W^{k,p}\"")

    def parse(tok):
        tok = tok.strip()
        m = re.fullmatch(r"W\^\{?\s*(-?[\d/]+)\s*,\s*([\d/]+|inf)\s*\}?", tok)
        if m:
            p = float("inf") if m.group(2) == "inf" else Fraction(m.group(2))
            return SobolevSpec(Fraction(m.group(1)), p, n)
        m = re.fullmatch(r"L\^\{?\s*([\d/]+|inf)\s*\}?", tok)
        if m:
            p = float("inf") if m.group(1) == "inf" else Fraction(m.group(1))
            return SobolevSpec(Fraction(0), p, n)
        raise _schema(f"cannot parse space {tok!r}")

    lhs, target = expr.split("->")
    s1, s2 = lhs.split("*")
    dec = mult_valid(parse(s1), parse(s2), parse(target))
    return {"valid": dec.valid, "branch": dec.branch, "trace": dec.trace}


def run_sobolev_ladder(cfg):
    from .funcspaces import regularity_ladder
    trace = regularity_ladder(cfg.get("recurrence", "sobolev_step"),
                              p0=cfg.get("p0", 2), target=cfg.get("target", 6),
                              n=int(cfg.get("n", 3)), q=cfg.get("q"))
    return {"recurrence": trace.recurrence,
            "exponents": [str(p) for p in trace.exponents],
            "termination": trace.termination, "steps": trace.steps}


def run_charts_normal(cfg):
    import numpy as np
    from . import charts
    from .core import diff_array
    g = _build_metric({**cfg, "metric": cfg.get("metric", "sphere_chart")})
    cmap, gnew = charts.normal_coordinates(g)
    pole = gnew.grid.pole_index
    dg0 = max(float(np.abs(diff_array(gnew.values, gnew.grid, a, 1)[pole]).max())
              for a in range(3))
    g0_err = float(np.abs(gnew.values[pole] - np.eye(3)).max())
    return {"g0_error": g0_err, "dg0": dg0, "convergence_metric": dg0}


def run_charts_harmonic(cfg):
    import numpy as np
    from . import charts
    from .core import ChartGrid, TensorField
    from .metric import MetricField
    dims = int(cfg.get("dims", 33))
    amp = float(cfg.get("amplitude", 0.3))
    grid = ChartGrid(3, 1.0, (dims,) * 3)

    def cb(x):
        x = np.asarray(x)
        p = amp * np.sin(0.9 * x[..., 0] + 0.3) * np.cos(0.7 * x[..., 1] + 0.2)
        p0 = amp * np.sin(0.3) * np.cos(0.2)
        return np.exp(2.0 * (p - p0))[..., None, None] * np.eye(3)

    g = MetricField(TensorField(grid, cb(grid.coords()), callback=cb))
    cmap, gnew, diag = charts.harmonic_coordinates(g)
    ratio = diag["post_contracted_christoffel"] / diag["pre_contracted_christoffel"]
    return {**diag, "reduction_ratio": ratio, "convergence_metric": ratio}


def run_charts_invert(cfg):
    import numpy as np
    from . import charts
    from .core import cube
    dims = int(cfg.get("dims", 32))
    amp = float(cfg.get("amplitude", 0.1))
    grid = cube(3, dims, 2 * np.pi)

    def phi(p):
        return p + amp * np.sin(p)

    imgs = phi(grid.coords().reshape(-1, 3)).reshape(grid.shape + (3,))
    cmap = charts.CoordinateMap(grid, imgs, forward=phi)
    psi = charts.invert_near_identity(cmap)
    y = grid.coords().reshape(-1, 3)
    comp = float(np.abs(phi(psi(y)) - y).max())
    return {"iterations": psi.iterations, "composition_error": comp,
            "convergence_metric": comp}


RUNNERS = {
    ("yamabe", "classify"): run_yamabe_classify,
    ("yamabe", "solve"): run_yamabe_solve,
    ("yamabe", "continuation"): run_yamabe_continuation,
    ("green", "solve"): run_green_solve,
    ("green", "fit"): run_green_fit,
    ("green", "blowup"): run_green_blowup,
    ("mass", "adm"): run_mass_adm,
    ("mass", "lef"): run_mass_lef,
    ("mass", "chain"): run_mass_chain,
    ("bubble", "energy"): run_bubble_energy,
    ("bubble", "lemma"): run_bubble_lemma,
    ("sobolev", "check"): run_sobolev_check,
    ("sobolev", "ladder"): run_sobolev_ladder,
    ("charts", "normal"): run_charts_normal,
    ("charts", "harmonic"): run_charts_harmonic,
    ("charts", "invert"): run_charts_invert,
}


def run_convergence(cfg):
    """Refinement ladder around another subcommand; fits the observed order."""
    import numpy as np
    target = (cfg.get("group"), cfg.get("sub"))
    runner = RUNNERS.get(target)
    if runner is None:
        raise _schema(f"convergence target {target} unknown")
    base = int(cfg.get("dims", 17 if target[0] in ("green", "charts") else 16))
    chart_like = target in (("green", "fit"), ("charts", "normal"),
                            ("charts", "harmonic"), ("mass", "chain"))
    ladder = [base, int(base * 1.5), base * 2]
    if chart_like:
        ladder = [d + 1 if d % 2 == 0 else d for d in ladder]
    errs, hs = [], []
    runs = []
    for d in ladder:
        out = runner({**cfg, "dims": d})
        err = out.get("convergence_metric")
        if err is None:
            raise _schema("target subcommand emits no convergence metric")
        errs.append(max(float(err), 1e-300))
        hs.append(1.0 / d)
        runs.append({"dims": d, "metric": err})
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return {"ladder": runs, "observed_order": float(slope)}


def build_parser():
    # SUPPRESS keeps a subcommand-level unset flag from clobbering the
    # value parsed before the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory (env CYL_OUT overrides)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--tol", type=float)
    ap = argparse.ArgumentParser(prog="cyl", description=__doc__,
                                 parents=[common])
    sub = ap.add_subparsers(dest="group")
    groups = {
        "yamabe": ["classify", "solve", "continuation"],
        "green": ["solve", "fit", "blowup"],
        "mass": ["adm", "lef", "chain"],
        "bubble": ["energy", "lemma"],
        "sobolev": ["check", "ladder"],
        "charts": ["normal", "harmonic", "invert"],
    }
    for gname, subs in groups.items():
        gp = sub.add_parser(gname)
        gsub = gp.add_subparsers(dest="sub")
        for s in subs:
            p = gsub.add_parser(s, parents=[common])
            p.add_argument("--dims", type=int)
            p.add_argument("--metric")
            p.add_argument("--q", type=float)
            p.add_argument("--amplitude", type=float)
            p.add_argument("--s", type=float)
            p.add_argument("--c", type=float)
            p.add_argument("--case")
            p.add_argument("--p", type=float)
            p.add_argument("--beta", type=float)
            p.add_argument("--gamma", type=float)
            p.add_argument("--oracle")
            p.add_argument("--aconst", type=float)
            p.add_argument("--chart")
            p.add_argument("--m", type=float)
            p.add_argument("--eps", type=float)
            p.add_argument("--radii")
            p.add_argument("--a-grid", dest="a_grid")
            p.add_argument("--R", type=float)
            p.add_argument("--mult")
            p.add_argument("--n", type=int)
            p.add_argument("--recurrence")
            p.add_argument("--p0")
            p.add_argument("--target")
    cp = sub.add_parser("convergence", parents=[common])
    cp.add_argument("target_group")
    cp.add_argument("target_sub")
    cp.add_argument("--dims", type=int)
    cp.add_argument("--metric")
    cp.add_argument("--amplitude", type=float)
    cp.add_argument("--oracle")
    cp.add_argument("--aconst", type=float)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    for name, default in (("config", None), ("out", None), ("seed", 0),
                          ("threads", 1), ("tol", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    _pin_threads(args.threads)

    from .errors import SchemaError, PreconditionError, SolverError

    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            print(f"schema error: cannot read config ({e})", file=sys.stderr)
            return 1
    for key, val in vars(args).items():
        if key in ("config", "out", "threads") or val is None:
            continue
        cfg[key] = val
    if args.group is None:
        ap.print_help()
        return 1
    if args.group == "convergence":
        cfg["group"] = args.target_group
        cfg["sub"] = args.target_sub
        runner = run_convergence
    else:
        if getattr(args, "sub", None) is None:
            print("schema error: missing subcommand", file=sys.stderr)
            return 1
        runner = RUNNERS.get((args.group, args.sub))
        if runner is None:
            print("schema error: unknown subcommand", file=sys.stderr)
            return 1
    out_dir = os.environ.get("CYL_OUT", args.out)
    try:
        results = runner(cfg)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 1
    except PreconditionError as e:
        print(f"precondition error: {e}", file=sys.stderr)
        return 2
    except SolverError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return 3
    _emit(cfg, results, out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
