"""Command line entry point: ``trunckern run|validate|oracle|sweep``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import parse_config
from .errors import ConfigError, HypothesisViolation, NumericalError
from .experiment import build_grid, build_operator, emit_report, run_experiment
from .kernels import (KernelParams, geometric_radii, kernel_l1_norm,
                      make_truncated_fractional_kernel, validate_ellipticity)
from .oracles import (BumpProfile, brute_force_operator, bump_bound_check, half_laplacian_example,
                      half_laplacian_profile, lemma_a1_check)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
ORACLE_SUITES = ("half_laplacian", "closed_forms", "lemma_a1", "bump_bounds", "all")

log = logging.getLogger("trunckern")


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.rho is not None:
        rhos = [float(v) for v in args.rho.split(",") if v.strip()]
        cfg = cfg.with_overrides(**{"problem.kind": "truncation_sweep", "problem.rho_list": rhos})
    record = run_experiment(cfg)
    out = args.out or cfg["out.dir"]
    paths = emit_report(record, out, snapshots=False if args.no_snapshots else None)
    print(f"{cfg['name']}: {len(record.rows)} rows in {record.wall_time:.2f}s -> {paths[0]}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    op = build_operator(cfg)
    spec = build_grid(cfg)
    radii = geometric_radii(spec.h, spec.L)
    kernels = []
    if op.kind == "linear":
        kernels = [("kernel", op.kernel)]
    elif op.kind == "isaac":
        kernels = [(f"member[{a}][{b}]", m.kernel)
                   for a, row in enumerate(op.family) for b, m in enumerate(row)]
    ok = True
    print(f"config {cfg['name']} digest {cfg.digest}")
    for label, k in kernels:
        rep = validate_ellipticity(k, radii)
        ok &= rep.ok
        print(f"{label}: lower_bound_ok={rep.lower_bound_ok} ratio={rep.lower_bound_ratio!r} "
              f"annulus_bound_ok={rep.annulus_bound_ok} ratio={rep.annulus_ratio!r} "
              f"symmetry_ok={rep.symmetry_ok} class_nonempty_ok={rep.class_nonempty_ok}")
        for f in rep.failures:
            print(f"  {f}")
    if not kernels:
        print(f"{op.kind}: extremal operator over the class with "
              f"lambda={op.params.lam!r}, Lambda={op.params.Lam!r}")
    return EXIT_OK if ok else EXIT_CONFIG


def _report(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok


def _suite_half_laplacian():
    p = KernelParams(1, 0.5, 1.0, 1.0, 0.0)
    K = make_truncated_fractional_kernel(p, 1.0)
    u = half_laplacian_profile()
    worst = 0.0
    for x in (-0.25, -0.1, 0.1, 0.25):
        ref = -half_laplacian_example(x)
        bf = brute_force_operator(u, K, x, breakpoints=(0.0, -2.0, -1.0, 1.0, 2.0))
        worst = max(worst, abs(bf - ref))
    return _report("half_laplacian", worst < 1e-6, f"max |brute - closed form| = {worst:.3e}")


def _suite_closed_forms():
    K = make_truncated_fractional_kernel(KernelParams(1, 0.25, 1.0, 2.0, 1.0), 1.0)
    v = kernel_l1_norm(K)
    return _report("l1_norm", v == 6.0, f"||K||_1 = {v!r} (expected 6.0)")


def _suite_lemma_a1():
    ok = True
    for s in (0.25, 0.5, 0.75):
        p = KernelParams(1, s, 1.0, 1.0, 0.0)
        rep = lemma_a1_check(make_truncated_fractional_kernel(p, 1.0), [0.1, 1.0, 10.0])
        a = rep.parts["a"]["ratios"]
        ok &= _report(f"lemma_a1 s={s}", max(abs(r - 1 / s) for r in a) < 1e-10,
                      f"tail ratios {a}")
    return ok


def _suite_bump_bounds():
    ok = True
    for s in (0.25, 0.5, 0.75):
        rep = bump_bound_check(BumpProfile(), KernelParams(1, s, 1.0, 2.0, 0.0), [1, 2, 4, 8])
        spread = max(rep.spread_plus, rep.spread_minus)
        ok &= _report(f"bump_bounds s={s}", spread <= 1.25 and rep.boundary_ok,
                      f"spread {spread:.6f}, boundary min {min(rep.boundary_min):.4f} >= mu {rep.mu:.4f}")
    return ok


def _cmd_oracle(args) -> int:
    suites = {"half_laplacian": _suite_half_laplacian, "closed_forms": _suite_closed_forms,
              "lemma_a1": _suite_lemma_a1, "bump_bounds": _suite_bump_bounds}
    names = list(suites) if args.suite == "all" else [args.suite]
    ok = all([suites[n]() for n in names])
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trunckern",
                                 description="Truncated nonlocal parabolic experiments.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides out.dir)")
    r.add_argument("--no-snapshots", action="store_true")
    r.set_defaults(func=_cmd_run, rho=None)
    v = sub.add_parser("validate", help="parse a config and check its kernels")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)
    o = sub.add_parser("oracle", help="run a verification suite")
    o.add_argument("suite", choices=ORACLE_SUITES)
    o.set_defaults(func=_cmd_oracle)
    w = sub.add_parser("sweep", help="run a truncation sweep over rho values")
    w.add_argument("config")
    w.add_argument("--rho", required=True, help="comma-separated decreasing rho values")
    w.add_argument("--out")
    w.add_argument("--no-snapshots", action="store_true")
    w.set_defaults(func=_cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, HypothesisViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
