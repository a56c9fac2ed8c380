"""Acceptance suite: one PASS/FAIL line per criterion.

The heavy experiments are driven through the ``trunckern`` command line with
the configurations in ``configs/``; every run happens once per session and
criterion 10 reruns them to compare the CSV bytes.
"""
import csv
import math
import os
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import capped_wavy_kernel, random_function
from trunckern import (Constant, Cylinder, EvolutionConfig, GridFunction, GridSpec, KernelParams,
                       OperatorConfig, apply_linear, apply_operator, apply_pucci, cfl_dt,
                       kernel_l1_norm, make_truncated_fractional_kernel, solve_cauchy,
                       solve_elliptic, step_explicit, weak_harnack_ratio)
from trunckern.oracles import (BumpProfile, bump_bound_check, half_laplacian_example,
                               half_laplacian_profile, holder_gamma, lemma_a1_check,
                               pucci_holder_quotient)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
EXPERIMENTS = ("harnack_rho", "hoelder_rho", "truncation")


def _report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def _cli():
    exe = shutil.which("trunckern")
    return [exe] if exe else [sys.executable, "-m", "trunckern.cli"]


def _run_cli(name, out):
    t0 = time.perf_counter()
    subprocess.run(_cli() + ["run", str(CONFIGS / f"{name}.cfg"), "--out", str(out),
                             "--no-snapshots"], check=True, capture_output=True)
    return time.perf_counter() - t0


def _rows(out):
    with open(Path(out) / "metrics.csv", newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def experiments(tmp_path_factory):
    """Run every acceptance configuration once; returns name -> (dir, seconds)."""
    base = tmp_path_factory.mktemp("acceptance")
    return {name: (base / name, _run_cli(name, base / name)) for name in EXPERIMENTS}


# ---------------------------------------------------------------------------

def test_criterion_01_half_laplacian(capsys):
    t0 = time.perf_counter()
    p = KernelParams(1, 0.5, 1.0, 1.0, 0.0)
    cfg = OperatorConfig(p, "linear", make_truncated_fractional_kernel(p, 1.0))
    xs = (-0.5, -0.25, -0.1, 0.1, 0.25, 0.5)
    prof = half_laplacian_profile()
    worst_abs, worst_rel = [], []
    for n in (4097, 8193):                      # h = 2^-10 and 2^-11 on [-2, 2]
        spec = GridSpec(1, 2.0, n, Constant(0.0))
        Lu = apply_linear(GridFunction.from_callable(spec, lambda P: prof(P[:, 0])), cfg)
        errs, rels = [], []
        for x in xs:
            # +-0.1 is not a dyadic node, so compare at the nearest one
            i = spec.nearest_index(x)
            ref = -half_laplacian_example(float(spec.axis()[i[0]]))
            errs.append(abs(Lu.values[i] - ref))
            rels.append(errs[-1] / abs(ref))
        worst_abs.append(max(errs))
        worst_rel.append(max(rels))
    elapsed = time.perf_counter() - t0
    factor = worst_abs[0] / worst_abs[1]
    ok = worst_rel[0] <= 1e-2 and factor >= 1.5 and elapsed <= 30
    _report(capsys, 1, ok, f"max rel err {worst_rel[0]:.2e} at h=2^-10, max abs err "
            f"{worst_abs[0]:.2e} -> {worst_abs[1]:.2e} (factor {factor:.2f}), {elapsed:.1f}s")


def test_criterion_02_closed_forms(capsys):
    l1 = kernel_l1_norm(make_truncated_fractional_kernel(KernelParams(1, 0.25, 1.0, 2.0, 1.0), 1.0))
    radii = [0.1, 1.0, 10.0]
    tail_err = second_err = 0.0
    for s in (0.25, 0.5, 0.75):
        K = make_truncated_fractional_kernel(KernelParams(1, s, 1.0, 1.0, 0.0), 1.0)
        a = lemma_a1_check(K, radii).parts["a"]["ratios"]
        tail_err = max(tail_err, max(abs(r - 1.0 / s) for r in a), max(a) - min(a))
        e = lemma_a1_check(K, radii, use_closed_form=False).parts["e"]["moments"]
        second_err = max(second_err, max(abs(m / (2 * R ** (2 - 2 * s) / (2 - 2 * s)) - 1)
                                          for m, R in zip(e, radii)))
    ok = l1 == 6.0 and tail_err <= 1e-10 and second_err <= 1e-8
    _report(capsys, 2, ok, f"||K||_1 = {l1!r}, tail ratio error {tail_err:.1e}, "
            f"quadrature second moment rel error {second_err:.1e}")


def test_criterion_03_bump_scaling(capsys):
    spreads = {}
    for s in (0.25, 0.5, 0.75):
        rep = bump_bound_check(BumpProfile(), KernelParams(1, s, 1.0, 2.0, 0.0), [1, 2, 4, 8],
                               nodes_per_radius=256)
        spreads[s] = max(rep.spread_plus, rep.spread_minus)
    ok = max(spreads.values()) <= 1.25
    _report(capsys, 3, ok, "spread " + ", ".join(f"s={s}: {v:.6f}" for s, v in spreads.items()))


def test_criterion_04_extremal_holder_quotient(capsys):
    out = {}
    ok = True
    for s, gamma in ((0.25, 0.5), (0.5, 0.5), (0.75, 0.5), (0.1, 0.8), (0.9, 0.2)):
        p = KernelParams(1, s, 1.0, 2.0, 0.0)
        qs = []
        for R in (1.0, 2.0, 4.0):
            g, q = pucci_holder_quotient(BumpProfile(R).grid_function(GridSpec(1, 2 * R, 513)), p, R)
            ok &= g == pytest.approx(gamma) and g == holder_gamma(s)
            qs.append(q)
        out[s] = max(qs) / min(qs)
    ok &= max(out.values()) <= 1.5
    _report(capsys, 4, ok, "quotient spread " + ", ".join(f"s={s}: {v:.4f}" for s, v in out.items()))


def test_criterion_05_harnack_anchor(capsys):
    spec = GridSpec(1, 2.0, 513, Constant(1.0))
    p = KernelParams(1, 0.5, 1.0, 2.0, 0.0)
    u = GridFunction(spec, np.ones(spec.shape))
    field = solve_cauchy(EvolutionConfig(spec, OperatorConfig(p, "pucci_minus"), u, 1.0))
    rep = weak_harnack_ratio(field, Cylinder.at_origin(1.0, 0.5))
    ok = abs(rep.empirical_c - 1.0) <= 1e-3
    _report(capsys, 5, ok, f"empirical_c = {float(rep.empirical_c):.6g}")


def test_criterion_06_harnack_robustness(capsys, experiments):
    out, seconds = experiments["harnack_rho"]
    c = {float(r["rho"]): float(r["harnack_c"]) for r in _rows(out)}
    ratio = min(c.values()) / max(c.values())
    ok = set(c) == {0.0, 1 / 64, 1 / 16} and min(c.values()) > 0 and ratio >= 0.5 and seconds <= 300
    _report(capsys, 6, ok, "empirical_c " + ", ".join(f"rho={k}: {v:.5f}" for k, v in c.items())
            + f"; min/max {ratio:.3f}; {seconds:.0f}s")


def test_criterion_07_holder_uniformity(capsys, experiments):
    out, _ = experiments["hoelder_rho"]
    rows = _rows(out)
    semi = {float(r["rho"]): float(r["seminorm"]) for r in rows}
    alpha = {float(r["alpha"]) for r in rows}
    ahat0 = [float(r["alpha_hat"]) for r in rows if float(r["rho"]) == 0.0][0]
    ratio = max(semi.values()) / min(semi.values())
    ok = set(semi) == {0.0, 1 / 64, 1 / 16} and len(alpha) == 1 and ratio <= 3
    _report(capsys, 7, ok, "seminorm " + ", ".join(f"rho={k}: {v:.4f}" for k, v in semi.items())
            + f"; alpha {alpha.pop()} (fit {ahat0:.3f}); max/min {ratio:.3f}")


def test_criterion_08_truncation_sweep(capsys, experiments):
    out, _ = experiments["truncation"]
    rows = _rows(out)
    errs = [(float(r["rho"]), float(r["sup_error"])) for r in rows if float(r["rho"]) > 0]
    vals = [e for _, e in errs]
    ok = ([r for r, _ in errs] == [2.0 ** -n for n in range(1, 7)]
          and all(b < a for a, b in zip(vals[:-1], vals[1:])) and vals[-1] <= 1e-2
          and float(rows[0]["h"]) == 2.0 ** -8)
    _report(capsys, 8, ok, "sup errors " + ", ".join(f"{v:.3e}" for v in vals))


def _invariants():
    rng = np.random.default_rng(2024)
    spec = GridSpec(1, 1.0, 129)
    failures = []
    for s in (0.25, 0.5, 0.75):
        p = KernelParams(1, s, 1.0, 2.0, 0.0)
        wide = KernelParams(1, s, 1.0, 4.0, 0.0)
        plus, minus = OperatorConfig(p, "pucci_plus"), OperatorConfig(p, "pucci_minus")
        c = GridFunction(spec.with_extension(Constant(1.7)), np.full(spec.shape, 1.7))
        K = make_truncated_fractional_kernel(p, 1.0)
        for cfg in (plus, minus, OperatorConfig(p, "linear", K)):
            if np.any(apply_operator(c, cfg).values != 0.0):
                failures.append(f"constant not annihilated s={s} {cfg.kind}")
        for _ in range(5):
            u, v = random_function(spec, rng, 0.2), random_function(spec, rng, -0.3)
            if not np.array_equal(apply_pucci(-u, plus).values, -apply_pucci(u, minus).values):
                failures.append(f"antisymmetry s={s}")
            Pu, Pv, Puv = (apply_pucci(w, plus).values for w in (u, v, u + v))
            Mu, Mv, Muv = (apply_pucci(w, minus).values for w in (u, v, u + v))
            if np.any(Puv > Pu + Pv + 1e-10) or np.any(Muv < Mu + Mv - 1e-10):
                failures.append(f"additivity s={s}")
            Kw = capped_wavy_kernel(spec, wide, rng)
            Lu = apply_linear(u, OperatorConfig(wide, "linear", Kw)).values
            Mw, Pw = (apply_pucci(u, OperatorConfig(wide, k)).values for k in ("pucci_minus", "pucci_plus"))
            if np.any(Mw > Lu + 1e-10) or np.any(Lu > Pw + 1e-10):
                failures.append(f"sandwich s={s}")
        ecfg = EvolutionConfig(spec, minus, c, 1.0)
        dt = cfl_dt(ecfg)
        if np.any(step_explicit(c, 0.0, ecfg, dt).values != 1.7):
            failures.append(f"constant moved s={s}")
        violations = 0
        for _ in range(100):
            u = random_function(spec, rng, 0.0)
            gap = np.abs(rng.standard_normal(spec.shape))
            w = GridFunction(spec.with_extension(Constant(rng.uniform(0, 1))), u.values + gap)
            violations += int(np.sum(step_explicit(u, 0.0, ecfg, dt).values
                                     > step_explicit(w, 0.0, ecfg, dt).values))
        if violations:
            failures.append(f"{violations} comparison violations s={s}")
    # elliptic solve against a dense direct solve
    espec = GridSpec(1, 1.0, 257)
    p = KernelParams(1, 0.5, 1.0, 2.0, 0.1)
    op = OperatorConfig(p, "linear", make_truncated_fractional_kernel(p, 1.0))
    zero = espec.with_extension(Constant(0.0))
    A = np.column_stack([apply_operator(GridFunction(zero, e), op).values
                         for e in np.eye(espec.size)])
    b = apply_operator(GridFunction(espec.with_extension(Constant(0.5)), np.zeros(espec.size)), op).values
    direct = np.linalg.solve(A, -1.0 - b)
    gap = float(np.max(np.abs(solve_elliptic(espec, op, -1.0, 0.5).values - direct)))
    if gap > 1e-6:
        failures.append(f"elliptic gap {gap:.2e}")
    return failures, gap


def test_criterion_09_structural_invariants(capsys):
    failures, gap = _invariants()
    _report(capsys, 9, not failures,
            "; ".join(failures) if failures else
            f"all invariants hold (elliptic vs dense gap {gap:.1e} on 257 unknowns)")


def test_criterion_10_determinism(capsys, experiments, tmp_path):
    same = {}
    for name, (first, _) in experiments.items():
        _run_cli(name, tmp_path / name)
        same[name] = ((first / "metrics.csv").read_bytes()
                      == (tmp_path / name / "metrics.csv").read_bytes())
    _report(capsys, 10, all(same.values()),
            ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
