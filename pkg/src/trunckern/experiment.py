"""Experiment orchestration: kernels, evolution, metrics and report files."""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, HypothesisViolation, NumericalError
from .evolution import (ConvergenceReport, EvolutionConfig, SpaceTimeField, solve_cauchy,
                        solve_elliptic, solve_truncation_sequence, write_snapshots)
from .grid import Constant, GridSpec, Periodic
from .kernels import KernelParams, make_truncated_fractional_kernel, make_user_kernel
from .metrics import (Cylinder, estimate_alpha, oscillation_decay, partial_holder_seminorm,
                      weak_harnack_ratio)
from .operators import IsaacMember, OperatorConfig, apply_operator
from .profiles import forcing_profile, initial_profile

log = logging.getLogger(__name__)

CSV_COLUMNS = ("experiment", "rho", "s", "R", "alpha", "seminorm", "harnack_c", "osc_k",
               "alpha_hat", "harnack_c_avg", "inf_value", "weighted_mass", "pairs_evaluated",
               "holder_R", "sup_error", "dt", "h", "n", "d", "kind", "problem",
               "residual", "u_min", "u_max")


@dataclass
class RunRecord:
    """Everything one run produced.

    ``rows`` are flat metric records (one per ``rho`` run); ``fields`` maps a
    label to the computed space-time field.
    """

    config: ExperimentConfig
    digest: str
    input_hash: str
    wall_time: float
    rows: list = field(default_factory=list)
    fields: dict = field(default_factory=dict, repr=False)


def kernel_params(cfg: ExperimentConfig, rho: Optional[float] = None) -> KernelParams:
    return KernelParams(cfg["grid.d"], cfg["kernel.s"], cfg["kernel.lambda"],
                        cfg["kernel.Lambda"], cfg["kernel.rho"] if rho is None else rho)


def _scaled_kernel(params: KernelParams, scale: float, asym: float = 0.0, wave: bool = False):
    base = make_truncated_fractional_kernel(params, scale)
    if asym == 0.0 and not wave:
        return base
    if wave:
        def ev(y):
            r = np.linalg.norm(y, axis=-1)
            return base.eval(y) * (1.5 + 0.5 * np.cos(4.0 * r))
        return make_user_kernel(ev, params, True, label="radial_wave")

    def ev(y):
        return base.eval(y) * (1.0 + asym * (y[..., 0] > 0))
    return make_user_kernel(ev, params, False, label="anisotropic")


def build_operator(cfg: ExperimentConfig, rho: Optional[float] = None) -> OperatorConfig:
    """Operator described by the kernel and op blocks of ``cfg``."""
    p = kernel_params(cfg, rho)
    kind = cfg["op.kind"]
    mode = cfg["op.near_field_mode"]
    scale = cfg["kernel.scale"] if cfg["kernel.scale"] is not None else p.lam
    bound = cfg["op.drift_Lambda"]
    if kind == "linear":
        if cfg["kernel.family"] == "user":
            prof = cfg["kernel.user_profile"]
            kernel = _scaled_kernel(p, scale, 0.5 if prof == "anisotropic" else 0.0,
                                    prof == "radial_wave")
        else:
            kernel = make_truncated_fractional_kernel(p, scale)
        drift = None
        if bound > 0:
            drift = tuple([bound] + [0.0] * (p.d - 1))
        return OperatorConfig(p, "linear", kernel, drift=drift, near_field_mode=mode)
    if kind == "isaac":
        rows = {}
        for m in cfg.family:
            member = IsaacMember(_scaled_kernel(p, m.scale, m.asym),
                                 m.drift if any(m.drift) else None)
            rows.setdefault(m.alpha, []).append((m.beta, member))
        family = tuple(tuple(mem for _, mem in sorted(rows[a], key=lambda t: t[0]))
                       for a in sorted(rows))
        return OperatorConfig(p, "isaac", family=family, near_field_mode=mode)
    return OperatorConfig(p, kind, envelope=bound, near_field_mode=mode)


def build_grid(cfg: ExperimentConfig) -> GridSpec:
    ext = Periodic() if cfg["grid.extension"] == "periodic" else Constant(cfg.extension_value)
    return GridSpec(cfg["grid.d"], cfg["grid.L"], cfg["grid.n"], ext)


def build_evolution(cfg: ExperimentConfig, rho: Optional[float] = None) -> EvolutionConfig:
    spec = build_grid(cfg)
    name, seed = cfg.initial
    u0 = initial_profile(spec, name, seed, cfg["problem.initial_value"])
    return EvolutionConfig(spec, build_operator(cfg, rho), u0, cfg["time.T"],
                           forcing_profile(cfg["problem.forcing"], cfg["problem.forcing_value"]),
                           cfg["time.cfl_fraction"], cfg["time.dt"], cfg["time.snapshot_stride"])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def _field_metrics(field_: SpaceTimeField, cfg: ExperimentConfig, rho: float) -> dict:
    s, R = cfg["kernel.s"], cfg["metrics.R"]
    hR = cfg["metrics.holder_R"] or R / 4.0
    Q = Cylinder.at_origin(R, s, field_.grid.d)
    row = {"rho": rho, "s": s, "R": R, "holder_R": hR}
    levels = cfg["metrics.levels"]
    try:
        if levels is None:
            ahat, info = estimate_alpha(field_, Q, rho)
            row["osc_k"] = info["osc"]
        else:
            osc = oscillation_decay(field_, R, levels, rho, s=s)
            row["osc_k"] = [v for _, v in osc]
            ks = np.array([k for k, v in osc if v > 0], float)
            vs = np.array([v for _, v in osc if v > 0])
            ahat = float(-np.polyfit(ks * math.log(4.0), np.log(vs), 1)[0]) if len(vs) >= 2 else math.nan
        row["alpha_hat"] = ahat
    except NumericalError as exc:
        log.warning("alpha fit skipped: %s", exc)
        row["alpha_hat"] = math.nan
    if R ** (2 * s) > cfg["time.T"] * (1 + 1e-12):
        log.warning("cylinder duration R^2s exceeds the horizon T")
    try:
        h = weak_harnack_ratio(field_, Q, cfg["metrics.harnack_a"])
        row.update(harnack_c=h.empirical_c, harnack_c_avg=h.empirical_c_avg,
                   inf_value=h.inf_value, weighted_mass=h.weighted_mass)
    except HypothesisViolation:
        log.info("field takes negative values; weak Harnack ratio skipped")
    return row


def _holder_metrics(field_: SpaceTimeField, cfg: ExperimentConfig, rho: float,
                    alpha: float) -> dict:
    hR = cfg["metrics.holder_R"] or cfg["metrics.R"] / 4.0
    Q = Cylinder.at_origin(hR, cfg["kernel.s"], field_.grid.d)
    rep = partial_holder_seminorm(field_, Q, rho, alpha, seed=cfg["seed"])
    return {"alpha": alpha, "seminorm": rep.seminorm, "pairs_evaluated": rep.pairs_evaluated}


def _pick_alpha(cfg, fits: dict, reference_rho: float) -> Optional[float]:
    if cfg["metrics.alpha"] is not None:
        return cfg["metrics.alpha"]
    a = fits.get(reference_rho, math.nan)
    if not math.isfinite(a):
        return None
    return float(min(max(a, 1e-3), 1.0))


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    """Run the problem described by ``cfg`` and compute its metrics."""
    t0 = time.perf_counter()
    kind = cfg["problem.kind"]
    common = {"experiment": cfg["name"], "kind": cfg["op.kind"], "problem": kind,
              "n": cfg["grid.n"], "d": cfg["grid.d"]}
    record = RunRecord(cfg, cfg.digest, cfg.input_hash, 0.0)
    if kind == "elliptic":
        spec = build_grid(cfg)
        if spec.periodic:
            raise ConfigError("elliptic problems need a constant exterior")
        op = build_operator(cfg)
        u = solve_elliptic(spec, op, cfg["problem.forcing_value"] if cfg["problem.forcing"] != "zero" else 0.0,
                           cfg.extension_value)
        res = float(np.max(np.abs(apply_operator(u, op).values
                                  - (cfg["problem.forcing_value"] if cfg["problem.forcing"] != "zero" else 0.0))))
        row = dict(common, rho=op.params.rho, s=op.params.s, h=spec.h, residual=res,
                   u_min=float(u.values.min()), u_max=float(u.values.max()))
        record.rows.append(row)
        record.fields["elliptic"] = SpaceTimeField([(0.0, u)], 0.0, spec, op.params)
    else:
        if kind == "truncation_sweep":
            rhos = list(cfg["problem.rho_list"])
            rep: ConvergenceReport = solve_truncation_sequence(build_evolution(cfg), rhos)
            fields = rep.fields
            errors = dict(zip(rhos, rep.sup_errors))
            dt = rep.dt
        else:
            rho = cfg["kernel.rho"]
            rhos = [rho]
            f = solve_cauchy(build_evolution(cfg))
            fields, errors, dt = {rho: f}, {rho: None}, f.dt
        ref = 0.0 if 0.0 in rhos else rhos[-1]
        fits = {}
        rows = {}
        for rho in rhos:
            rows[rho] = _field_metrics(fields[rho], cfg, rho)
            fits[rho] = rows[rho]["alpha_hat"]
        alpha = _pick_alpha(cfg, fits, ref)
        for rho in rhos:
            if alpha is not None:
                rows[rho].update(_holder_metrics(fields[rho], cfg, rho, alpha))
            spec = fields[rho].grid
            rows[rho].update(common, sup_error=errors[rho], dt=dt, h=spec.h,
                             u_min=float(fields[rho].values().min()),
                             u_max=float(fields[rho].values().max()))
            record.rows.append(rows[rho])
            record.fields[f"rho={rho!r}"] = fields[rho]
    record.wall_time = time.perf_counter() - t0
    return record


def emit_report(record: RunRecord, out_dir, snapshots: Optional[bool] = None) -> list:
    """Write ``metrics.csv``, ``manifest.txt`` and snapshot dumps to ``out_dir``.

    Returns the written paths.  File contents depend only on the
    configuration, so reruns are byte-identical.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory: {exc}") from None
    if not os.access(out_dir, os.W_OK):
        raise ConfigError(f"output directory {out_dir!r} is not writable")
    written = []
    csv_path = os.path.join(out_dir, "metrics.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in record.rows:
            fh.write(",".join(_fmt(row.get(c)) for c in CSV_COLUMNS) + "\n")
    written.append(csv_path)
    if snapshots is None:
        snapshots = record.config["out.snapshots"]
    snap_files = []
    if snapshots:
        for i, (label, f) in enumerate(record.fields.items()):
            path = os.path.join(out_dir, f"snapshots_{i}.txt")
            write_snapshots(f, path)
            snap_files.append(f"{os.path.basename(path)} {label}")
            written.append(path)
    man = os.path.join(out_dir, "manifest.txt")
    with open(man, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"name = {record.config['name']}\n")
        fh.write(f"digest = {record.digest}\n")
        fh.write(f"input_hash = {record.input_hash}\n")
        fh.write(f"rows = {len(record.rows)}\n")
        for line in snap_files:
            fh.write(f"snapshot = {line}\n")
        fh.write("\n# populated configuration\n")
        for line in record.config.canonical().splitlines():
            fh.write(f"# {line}\n")
    written.append(man)
    return written
