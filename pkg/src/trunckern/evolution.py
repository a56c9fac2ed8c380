"""Explicit monotone time stepping, truncation sequences and elliptic solves.

Time runs on ``[-T, 0]``: the data are imposed at ``t = -T`` and the solution
is integrated forward so that every stored field ends at ``t = 0``.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericalError
from .grid import Constant, Given, GridFunction, GridSpec, Periodic
from .kernels import KernelParams, make_truncated_fractional_kernel
from .operators import OperatorConfig, apply_operator, operator_mass

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EvolutionConfig:
    """Cauchy problem ``d_t u - F(u) = f`` on ``[-T, 0]`` with data at ``-T``.

    Parameters
    ----------
    grid : GridSpec
    operator : OperatorConfig
    initial : GridFunction
    horizon : float
        The length ``T`` of the time interval.
    forcing : callable, optional
        ``f(points, t)`` returning one value per point (or a scalar).
    cfl_fraction : float
        Fraction ``theta`` of the stability bound used when ``dt`` is None.
    dt : float, optional
        Fixed time step.
    snapshot_stride : int
        Store every ``snapshot_stride``-th step (the final time is always kept).
    """

    grid: GridSpec
    operator: OperatorConfig
    initial: GridFunction
    horizon: float
    forcing: Optional[Callable] = None
    cfl_fraction: float = 0.5
    dt: Optional[float] = None
    snapshot_stride: int = 1

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("horizon T must be positive")
        if not 0 < self.cfl_fraction <= 1:
            raise ConfigError("cfl_fraction must lie in (0, 1]")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")


@dataclass
class SpaceTimeField:
    """Snapshots ``(t, u(., t))`` with strictly increasing times ending at 0."""

    snapshots: list
    dt: float
    grid: GridSpec
    params: Optional[KernelParams] = None

    def __post_init__(self):
        times = [t for t, _ in self.snapshots]
        if not times:
            raise ConfigError("a field needs at least one snapshot")
        if any(b <= a for a, b in zip(times[:-1], times[1:])):
            raise ConfigError("snapshot times must be strictly increasing")
        if times[-1] != 0.0:
            raise ConfigError("the last snapshot must sit at t = 0")

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.snapshots])

    def final(self) -> GridFunction:
        return self.snapshots[-1][1]

    def values(self) -> np.ndarray:
        """All snapshot values stacked, shape ``(n_snapshots, n**d)``."""
        return np.stack([u.values.ravel() for _, u in self.snapshots])

    def map(self, fn) -> "SpaceTimeField":
        return SpaceTimeField([(t, fn(u)) for t, u in self.snapshots], self.dt, self.grid,
                              self.params)


@dataclass
class ConvergenceReport:
    """Sup-norm gaps of a sequence of truncated runs against a reference."""

    rho_sequence: list
    sup_errors: list
    reference: str
    dt: float
    fields: dict = field(default_factory=dict, repr=False)


def max_workers() -> int:
    """Parallelism cap read from ``TRUNCKERN_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("TRUNCKERN_THREADS", "1")))
    except ValueError:
        raise ConfigError("TRUNCKERN_THREADS must be an integer")


def cfl_dt(cfg: EvolutionConfig) -> float:
    """Time step ``theta / M`` with ``M`` the largest diagonal weight of the
    upwind discretization (kernel mass, near-field and drift weights)."""
    m = operator_mass(cfg.initial.spec, cfg.operator)
    if not math.isfinite(m):
        raise NumericalError("discrete kernel mass is not finite")
    if m <= 0:
        return math.inf
    return cfg.cfl_fraction / m


def _forcing_values(cfg, spec, t):
    if cfg.forcing is None:
        return None
    f = np.asarray(cfg.forcing(spec.points(), t), dtype=float)
    return np.broadcast_to(f.ravel() if f.size > 1 else f, (spec.size,))


def step_explicit(u: GridFunction, t: float, cfg: EvolutionConfig, dt: float,
                  step: int = 0) -> GridFunction:
    """One forward-Euler step ``u + dt (F(u) + f(., t))`` using the monotone
    (upwind) discretization."""
    F = apply_operator(u, cfg.operator, gradient="upwind").values.ravel()
    f = _forcing_values(cfg, u.spec, t)
    rate = F if f is None else F + f
    nxt = u.values.ravel() + dt * rate
    bad = ~np.isfinite(nxt)
    if bad.any():
        raise NumericalError(f"non-finite value at node {int(np.argmax(bad))} in step {step}")
    return GridFunction(u.spec, nxt.reshape(u.spec.shape))


def _time_grid(cfg: EvolutionConfig, dt: Optional[float] = None):
    if dt is None:
        dt = cfg.dt if cfg.dt is not None else cfl_dt(cfg)
        if cfg.dt is not None and cfg.dt > cfl_dt(cfg) * (1 + 1e-12):
            log.warning("fixed dt=%g exceeds the stability bound %g", cfg.dt, cfl_dt(cfg))
    steps = max(1, int(math.ceil(cfg.horizon / dt - 1e-9)))
    return steps, cfg.horizon / steps


def solve_cauchy(cfg: EvolutionConfig, dt: Optional[float] = None) -> SpaceTimeField:
    """Integrate from ``t = -T`` to ``t = 0`` storing snapshots.

    The step is ``T / N`` with ``N`` the smallest count keeping the step at
    or below the requested (or stability) bound.
    """
    steps, dt = _time_grid(cfg, dt)
    u = cfg.initial
    T = cfg.horizon
    snaps = [(-T, u)]
    for k in range(steps):
        t = -T + k * dt
        u = step_explicit(u, t, cfg, dt, k)
        if k + 1 == steps:
            snaps.append((0.0, u))
        elif (k + 1) % cfg.snapshot_stride == 0:
            snaps.append((-T + (k + 1) * dt, u))
    return SpaceTimeField(snaps, dt, u.spec, cfg.operator.params)


def _with_rho(op: OperatorConfig, rho: float) -> OperatorConfig:
    params = op.params.with_rho(rho)
    if op.kind == "linear":
        scale = op.kernel.scale
        if scale is None:
            raise ConfigError("truncation sequences need the built-in kernel family")
        kernel = make_truncated_fractional_kernel(params, scale)
        return replace(op, params=params, kernel=kernel)
    if op.kind == "isaac":
        raise ConfigError("truncation sequences support linear and extremal operators")
    return replace(op, params=params)


def solve_truncation_sequence(cfg: EvolutionConfig, rho_list: Sequence[float]) -> ConvergenceReport:
    """Run the Cauchy problem for every ``rho`` in ``rho_list`` on a common
    grid and time step and report sup-norm gaps against the reference run
    (``rho = 0`` when listed, otherwise the smallest ``rho``)."""
    rhos = [float(r) for r in rho_list]
    if not rhos or any(r < 0 for r in rhos):
        raise ConfigError("rho_list must be a nonempty list of nonnegative numbers")
    if any(b >= a for a, b in zip(rhos[:-1], rhos[1:])):
        raise ConfigError("rho_list must be strictly decreasing")
    cfgs = {r: replace(cfg, operator=_with_rho(cfg.operator, r)) for r in rhos}
    dt = min(_time_grid(c)[1] for c in cfgs.values())
    workers = min(max_workers(), len(rhos))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = dict(zip(rhos, pool.map(lambda r: solve_cauchy(cfgs[r], dt), rhos)))
    else:
        runs = {r: solve_cauchy(cfgs[r], dt) for r in rhos}
    ref_rho = 0.0 if 0.0 in rhos else rhos[-1]
    ref = runs[ref_rho].values()
    errors = [float(np.max(np.abs(runs[r].values() - ref))) for r in rhos]
    label = "rho=0" if ref_rho == 0.0 else f"finest rho={ref_rho!r}"
    return ConvergenceReport(rhos, errors, label, runs[ref_rho].dt, runs)


def solve_elliptic(grid: GridSpec, operator: OperatorConfig, f, exterior,
                   tol: Optional[float] = None, max_steps: int = 1_000_000,
                   theta: float = 0.9) -> GridFunction:
    """Solve ``F(u) = f`` on the box with exterior data fixed.

    Parameters
    ----------
    grid : GridSpec
        The box; every node is an unknown.
    operator : OperatorConfig
    f : GridFunction or float
    exterior : GridFunction on a larger aligned box, or float
        Data outside the box (constant beyond the larger box).
    tol : float, optional
        Residual sup-norm target; defaults to 1e-8 for symmetric integrable
        linear kernels (damped fixed point, residual checked every
        iteration) and 1e-6 otherwise (pseudo-time, checked every 50 steps).

    Raises
    ------
    NumericalError
        If the residual target is not met within ``max_steps``.
    """
    if isinstance(exterior, GridFunction):
        if exterior.spec.L <= grid.L:
            raise ConfigError("exterior data must live on a strictly larger box")
        spec = grid.with_extension(Given(exterior, exterior.spec.far_value(exterior.values)))
        start = exterior.spec.far_value(exterior.values)
    else:
        spec = grid.with_extension(Constant(float(exterior)))
        start = float(exterior)
    fv = f.values.ravel() if isinstance(f, GridFunction) else np.full(spec.size, float(f))
    k = operator.kernel
    pointwise = (operator.kind == "linear" and k is not None and k.is_symmetric
                 and k.is_integrable and operator.drift is None)
    if tol is None:
        tol = 1e-8 if pointwise else 1e-6
    check = 1 if pointwise else 50
    tau = theta / operator_mass(spec, operator)
    grad = "centered" if pointwise else "upwind"
    u = GridFunction(spec, np.full(spec.shape, start))
    res = math.inf
    for step in range(max_steps):
        r = apply_operator(u, operator, gradient=grad).values.ravel() - fv
        if step % check == 0:
            res = float(np.max(np.abs(r)))
            if res < tol:
                return u
        u = GridFunction(spec, (u.values.ravel() + tau * r).reshape(spec.shape))
    raise NumericalError(f"elliptic solve did not converge; final residual {res:.3e}")


# ---------------------------------------------------------------------------
# snapshot files

def _extension_label(spec: GridSpec) -> str:
    ext = spec.extension
    if isinstance(ext, Constant):
        return f"constant({ext.value!r})"
    if isinstance(ext, Given):
        return f"given(L={ext.exterior.spec.L!r},n={ext.exterior.spec.n},value={ext.value!r})"
    return "periodic"


def write_snapshots(field_: SpaceTimeField, path, params: Optional[KernelParams] = None) -> None:
    """Write a self-describing text dump: header lines, then rows
    ``t, x_1..x_d, u`` with 17 significant digits."""
    spec = field_.grid
    params = params or field_.params
    pts = spec.points()
    lines = ["# trunckern snapshots v1",
             f"# grid d={spec.d} L={spec.L!r} n={spec.n} extension={_extension_label(spec)}"]
    if params is not None:
        lines.append(f"# params d={params.d} s={params.s!r} lambda={params.lam!r} "
                     f"Lambda={params.Lam!r} rho={params.rho!r}")
    lines.append(f"# dt={field_.dt!r}")
    lines.append("t," + ",".join(f"x_{k + 1}" for k in range(spec.d)) + ",u")
    blocks = []
    for t, u in field_.snapshots:
        blk = np.column_stack([np.full(spec.size, t), pts, u.values.ravel()])
        blocks.append(blk)
    data = np.concatenate(blocks)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def read_snapshots(path) -> SpaceTimeField:
    """Read a dump written by :func:`write_snapshots` (constant or periodic
    extensions are restored; other policies fall back to constant 0)."""
    header = {}
    skip = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            skip += 1
            if not line.startswith("#"):
                break
            parts = line[1:].split()
            if parts and parts[0] in ("grid", "params"):
                header[parts[0]] = dict(p.split("=", 1) for p in parts[1:])
            elif parts and parts[0].startswith("dt="):
                header["dt"] = float(parts[0][3:])
    g = header["grid"]
    ext_s = g["extension"]
    if ext_s.startswith("constant("):
        ext = Constant(float(ext_s[len("constant("):-1]))
    elif ext_s == "periodic":
        ext = Periodic()
    else:
        ext = Constant(0.0)
    spec = GridSpec(int(g["d"]), float(g["L"]), int(g["n"]), ext)
    params = None
    if "params" in header:
        p = header["params"]
        params = KernelParams(int(p["d"]), float(p["s"]), float(p["lambda"]),
                              float(p["Lambda"]), float(p["rho"]))
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    n_snap = data.shape[0] // spec.size
    snaps = []
    for k in range(n_snap):
        blk = data[k * spec.size:(k + 1) * spec.size]
        snaps.append((float(blk[0, 0]), GridFunction(spec, blk[:, -1].reshape(spec.shape))))
    return SpaceTimeField(snaps, header["dt"], spec, params)
