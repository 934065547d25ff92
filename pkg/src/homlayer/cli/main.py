"""Command-line driver.

Subcommands: cell, homogenize, kernel, bie, direct, sweep, report.  The exit
code is nonzero iff a declared target or check fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..coeffs import OperatorParams, compute_lambda0, load_coefficients

log = logging.getLogger("homlayer")


def _coeffs(args, d=None):
    src = args.coeffs or args.preset
    if src is None:
        raise SystemExit("give --coeffs FILE or --preset NAME")
    return load_coefficients(src, d=d if d is not None else getattr(args, "d", None))


def _dump(obj, path=None):
    text = json.dumps(obj, indent=1, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    print(text)


def cmd_cell(args):
    from ..cell import corrector_residual, solve_correctors

    coeffs, _ = _coeffs(args)
    cs = solve_correctors(coeffs, args.grid, adjoint=args.adjoint)
    res = corrector_residual(cs, coeffs.adjoint() if args.adjoint else coeffs)
    out = {"grid": args.grid, "adjoint": args.adjoint, "residual": res,
           "per_corrector_residual": cs.residual.tolist(), "iterations": cs.iterations,
           "grad_l2": [cs.grad_l2(k) for k in range(coeffs.d + 1)]}
    if args.out:
        out["export"] = str(cs.export(args.out, fmt=args.format))
    _dump(out)
    return 0 if res <= args.tol else 1


def cmd_homogenize(args):
    from ..homog import homogenize, verify_effective_properties

    coeffs, params = _coeffs(args)
    H, cs = homogenize(coeffs, args.grid, lam=params.lam)
    rep = verify_effective_properties(H, coeffs, cs)
    out = H.to_dict()
    out["lambda0"] = compute_lambda0(coeffs)
    out["lambda_hat"] = H.lambda_hat()
    out["checks"] = rep.checks
    if args.out:
        H.save_json(args.out)
    _dump(out)
    print(rep, file=sys.stderr)
    return 0 if rep.passed else 1


def _parse_points(text, d):
    pts = [[float(v) for v in p.split(",")] for p in text.split(";") if p.strip()]
    arr = np.array(pts, float)
    if arr.shape[1] != d:
        raise SystemExit(f"points must have {d} coordinates")
    return arr


def cmd_kernel(args):
    from ..homog import homogenize
    from ..kernels import KernelContext, gamma_0, gamma_hatA, kernel_difference_rate

    coeffs, params = _coeffs(args)
    H, _ = homogenize(coeffs, args.grid)
    lam = params.lam if args.lam is None else args.lam
    d = coeffs.d
    if args.points:
        pts = _parse_points(args.points, d)
    else:
        r = np.geomspace(args.rmin, args.rmax, args.n)
        pts = r[:, None] * np.eye(d)[0]
    rows = []
    variants = {"with_c": True, "without_c": False} if args.compare_c else {"with_c": True}
    ctxs = {k: KernelContext.from_homogenized(H, lam=lam, include_c=v) for k, v in variants.items()}
    vals = {k: gamma_0(pts, c, want_gradient=True) for k, c in ctxs.items()}
    ga = gamma_hatA(pts, ctxs["with_c"])
    for i, x in enumerate(pts):
        row = {"x": x.tolist(), "gamma_hatA": float(ga[i])}
        for k, (v, g) in vals.items():
            row[f"gamma_0_{k}"] = float(v[i])
            row[f"grad_{k}"] = g[i].tolist()
        rows.append(row)
    out = {"lambda": lam, "L": {k: c.L for k, c in ctxs.items()}, "values": rows}
    if args.slopes:
        out["slopes"] = {f"l{l}": str(kernel_difference_rate(ctxs["with_c"], l=l)) for l in (0, 1)}
    if d == 2:
        out["label"] = "smoke-test (d=2)"
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            keys = ["gamma_hatA"] + [f"gamma_0_{k}" for k in variants]
            w.writerow([f"x{i}" for i in range(d)] + keys)
            for row in rows:
                w.writerow(row["x"] + [row[k] for k in keys])
    _dump(out, args.out)
    return 0


def cmd_bie(args):
    from ..bie import make_boundary_mesh, solve_dirichlet, solve_neumann, solve_regularity
    from ..bie.potentials import point_source_data
    from ..homog import homogenize
    from ..kernels import KernelContext, gamma_0

    coeffs, params = _coeffs(args, d=3)
    if coeffs.d != 3 or coeffs.m != 1:
        raise SystemExit("boundary integral solves need d = 3, m = 1")
    H, _ = homogenize(coeffs, args.grid)
    lam = params.lam if args.lam is None else args.lam
    ctx = KernelContext.from_homogenized(H, lam=lam)
    mesh = make_boundary_mesh(args.shape, args.n)
    x0 = None
    if args.data == "manufactured":
        x0 = np.asarray(args.source, float)
        g, fn, tg = point_source_data(mesh, ctx, x0)
    else:
        data = np.loadtxt(args.data_file, delimiter=",", ndmin=2)
        if data.shape[0] != mesh.size:
            raise SystemExit(f"data file must have {mesh.size} rows (one per node)")
        g = fn = data[:, 0]
        tg = data[:, 1:4] if data.shape[1] >= 4 else None
    kw = dict(lam_hat=H.lambda_hat(), mu=coeffs.mu) if args.check_coercive else {}
    if args.problem == "dirichlet":
        sol = solve_dirichlet(g, mesh, ctx, condition="svd", **kw)
    elif args.problem == "neumann":
        sol = solve_neumann(fn, mesh, ctx, condition="svd", **kw)
    else:
        sol = solve_regularity(g, mesh, ctx, tangential=tg)
    rng = np.random.default_rng(args.seed)
    xs = rng.uniform(-0.5, 0.5, size=(args.samples, 3))
    u = sol.evaluate(xs)
    out = {"problem": args.problem, "mesh": mesh.describe(), "residual": sol.residual,
           "condition": sol.condition, "info": sol.info, "density": sol.density.tolist()}
    ok = True
    if x0 is not None:
        exact = gamma_0(xs - x0, ctx)
        err = float(np.abs(u - exact).max() / np.abs(exact).max())
        out["relative_error"] = err
        ok = err <= args.target
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / f"{args.problem}-samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "u"])
        for x, v in zip(xs, u):
            w.writerow(list(x) + [v])
    _dump(out, outdir / f"{args.problem}.json")
    return 0 if ok else 1


def _domain(args, d):
    from .experiments import make_domain

    return make_domain(args.domain, d, args.side)


def cmd_direct(args):
    from ..homog import homogenize
    from ..oracle import direct_solve
    from .experiments import exponential_solution

    coeffs, params = _coeffs(args)
    lam = params.lam if args.lam is None else args.lam
    par = OperatorParams(lam=lam, epsilon=args.eps, lambda0=params.lambda0)
    dom = _domain(args, coeffs.d)
    H = None
    if args.bc == "exponential":
        H, _ = homogenize(coeffs, 64)
        g, _ = exponential_solution(H, lam)
    else:
        g = float(args.bc)
    target = coeffs
    if args.homogenized:
        H = H or homogenize(coeffs, 64)[0]
        target = H
    field = direct_solve(target, par, dom, g, args.grid)
    out = {"h": field.h, "shape": list(field.values.shape), "info": field.info}
    if args.out:
        out["dump"] = str(field.save(args.out))
        if args.line_cut:
            field.line_cut_csv(Path(args.out).with_suffix(".cut.csv"))
    _dump(out)
    return 0


def cmd_sweep(args):
    from .config import ExperimentConfig
    from .experiments import homogenization_sweep

    cfg = ExperimentConfig.from_toml(args.config) if args.config else ExperimentConfig()
    for key in ("experiment", "preset", "grid", "outdir", "workers", "d"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if args.eps:
        cfg.eps = sorted((float(e) for e in args.eps.split(",")), reverse=True)
    cfg.__post_init__()
    rep = homogenization_sweep(cfg)
    path = rep.write(cfg.outdir, svg=not args.no_plot)
    print(rep)
    print(f"report: {path}")
    return 0 if rep.passed else 1


def cmd_report(args):
    rows, ok = [], True
    for p in args.inputs:
        data = json.loads(Path(p).read_text())
        for k, v in data.get("results", {}).items():
            rows.append((Path(p).stem, k, "PASS" if v else "FAIL"))
            ok &= bool(v)
    w = max((len(r[0]) for r in rows), default=4)
    for r in rows:
        print(f"{r[0]:<{w}}  {r[2]}  {r[1]}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            csv.writer(fh).writerows([("report", "target", "status"), *rows])
    return 0 if ok else 1


def _add_coeff_args(p):
    p.add_argument("--coeffs", help="coefficient file (TOML or JSON)")
    p.add_argument("--preset", help="shipped preset name")
    p.add_argument("--d", type=int, help="override the dimension of the coefficient file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="homlayer", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cell", help="solve the cell problems and export correctors")
    _add_coeff_args(p)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--adjoint", action="store_true")
    p.add_argument("--out", help="output stem")
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(fn=cmd_cell)

    p = sub.add_parser("homogenize", help="effective tensors and their checks")
    _add_coeff_args(p)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--out", help="JSON file for the effective tensors")
    p.set_defaults(fn=cmd_homogenize)

    p = sub.add_parser("kernel", help="tabulate the homogenized fundamental solution")
    _add_coeff_args(p)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--lam", type=float)
    p.add_argument("--points", help="'x,y,z;x,y,z'")
    p.add_argument("--rmin", type=float, default=0.01)
    p.add_argument("--rmax", type=float, default=5.0)
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--compare-c", action="store_true", help="also report L without c_hat")
    p.add_argument("--slopes", action="store_true", help="fit the near-diagonal difference slopes")
    p.add_argument("--csv")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_kernel)

    p = sub.add_parser("bie", help="boundary integral solves of the limit problem")
    bsub = p.add_subparsers(dest="action", required=True)
    q = bsub.add_parser("solve")
    _add_coeff_args(q)
    q.add_argument("--problem", choices=("dirichlet", "neumann", "regularity"), required=True)
    q.add_argument("--shape", choices=("sphere", "ellipsoid", "star"), default="sphere")
    q.add_argument("--n", type=int, default=32)
    q.add_argument("--grid", type=int, default=32, help="cell-problem grid")
    q.add_argument("--lam", type=float)
    q.add_argument("--data", choices=("manufactured", "file"), default="manufactured")
    q.add_argument("--data-file", help="CSV with one row per node: value[, tangential gradient]")
    q.add_argument("--source", type=float, nargs=3, default=(1.7, 1.53, 1.19))
    q.add_argument("--samples", type=int, default=20)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--target", type=float, default=1e-3)
    q.add_argument("--check-coercive", action="store_true")
    q.add_argument("--out", default="bie-out")
    q.set_defaults(fn=cmd_bie)

    p = sub.add_parser("direct", help="finite-difference reference solve")
    _add_coeff_args(p)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--lam", type=float)
    p.add_argument("--domain", default="square", choices=("square", "box", "sphere", "disk"))
    p.add_argument("--side", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--bc", default="exponential", help="'exponential' or a constant value")
    p.add_argument("--homogenized", action="store_true", help="solve the limit problem instead")
    p.add_argument("--out", help="output stem for the field dump")
    p.add_argument("--line-cut", action="store_true")
    p.set_defaults(fn=cmd_direct)

    p = sub.add_parser("sweep", help="epsilon sweep with rate targets")
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--experiment", choices=("sweep", "green"))
    p.add_argument("--preset")
    p.add_argument("--d", type=int)
    p.add_argument("--eps", help="comma separated")
    p.add_argument("--grid", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--outdir")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="collect pass/fail lines from JSON reports")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return int(args.fn(args) or 0)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
