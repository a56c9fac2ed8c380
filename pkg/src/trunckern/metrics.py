"""Regularity measurements on space-time fields.

Cylinders are ``Q_R(x0, t0) = B_R(x0) x (t0 - R^{2s}, t0]`` and distances are
parabolic: ``max(|x - y|, |t - tau|^{1/(2s)})``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import beta as beta_fn

from .errors import ConfigError, HypothesisViolation, NumericalError
from .evolution import SpaceTimeField
from .grid import Given, Periodic
from .kernels import sphere_area

log = logging.getLogger(__name__)

MAX_PAIRS = 10 ** 7
_BLOCK = 1 << 22


def parabolic_distance(p, q, s: float) -> float:
    """``max(|x - y|, |t - tau|^{1/(2s)})`` for ``p = (x, t)``, ``q = (y, tau)``."""
    x, t = p
    y, tau = q
    dx = float(np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(y, float))))
    return max(dx, abs(t - tau) ** (1.0 / (2.0 * s)))


def _pdist(X1, T1, X2, T2, s):
    dx = np.sqrt(np.sum((X1 - X2) ** 2, axis=-1))
    return np.maximum(dx, np.abs(T1 - T2) ** (1.0 / (2.0 * s)))


@dataclass(frozen=True)
class Cylinder:
    """Parabolic cylinder ``B_R(x0) x (t0 - R^{2s}, t0]``."""

    center: tuple
    R: float
    s: float

    def __post_init__(self):
        if not self.R > 0:
            raise ConfigError("cylinder radius must be positive")
        if not 0 < self.s < 1:
            raise ConfigError("s must lie in (0, 1)")
        if self.center[1] > 0:
            raise ConfigError("cylinder top time must be <= 0")

    @classmethod
    def at_origin(cls, R: float, s: float, d: int = 1) -> "Cylinder":
        return cls((tuple([0.0] * d), 0.0), R, s)

    @property
    def x0(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.center[0], dtype=float))

    @property
    def t0(self) -> float:
        return float(self.center[1])

    @property
    def duration(self) -> float:
        return self.R ** (2.0 * self.s)

    def scaled(self, factor: float) -> "Cylinder":
        return Cylinder(self.center, self.R * factor, self.s)

    def time_mask(self, times) -> np.ndarray:
        times = np.asarray(times)
        return (times > self.t0 - self.duration) & (times <= self.t0)

    def space_mask(self, points) -> np.ndarray:
        return np.sqrt(np.sum((points - self.x0) ** 2, axis=1)) < self.R


def _collect(field_: SpaceTimeField, Q: Cylinder):
    """Points ``(x, t, u)`` of all stored snapshot nodes inside ``Q``."""
    pts = field_.grid.points()
    smask = Q.space_mask(pts)
    times = field_.times
    tmask = Q.time_mask(times)
    xs, ts, us = [], [], []
    for k in np.nonzero(tmask)[0]:
        t, u = field_.snapshots[k]
        xs.append(pts[smask])
        ts.append(np.full(int(smask.sum()), t))
        us.append(u.values.ravel()[smask])
    if not xs:
        return np.zeros((0, pts.shape[1])), np.zeros(0), np.zeros(0)
    return np.concatenate(xs), np.concatenate(ts), np.concatenate(us)


@dataclass
class RegularityReport:
    """Result of :func:`partial_holder_seminorm`."""

    alpha: float
    seminorm: float
    cutoff: float
    pairs_evaluated: int
    argmax_pair: Optional[tuple]
    degenerate: bool = False
    subsampled: bool = False

    def to_record(self) -> dict:
        rec = {k: v for k, v in asdict(self).items() if k != "argmax_pair"}
        if self.argmax_pair is not None:
            (x, t), (y, tau) = self.argmax_pair
            rec["argmax_x"] = " ".join(repr(float(v)) for v in np.atleast_1d(x))
            rec["argmax_t"] = float(t)
            rec["argmax_y"] = " ".join(repr(float(v)) for v in np.atleast_1d(y))
            rec["argmax_tau"] = float(tau)
        return rec


def partial_holder_seminorm(field_: SpaceTimeField, Q: Cylinder, rho: float, alpha: float,
                            seed: int = 0, max_pairs: int = MAX_PAIRS) -> RegularityReport:
    """Sup of ``|u(p) - u(q)| / d(p, q)^alpha`` over node pairs in ``Q`` with
    ``d(p, q) > rho``.

    All pairs are visited when there are at most ``max_pairs`` of them;
    otherwise every point is paired with an equal share of partners drawn
    with the given seed.
    """
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    if rho < 0:
        raise ConfigError("rho must be nonnegative")
    X, T, U = _collect(field_, Q)
    M = len(U)
    s = Q.s
    best, arg, count = 0.0, None, 0
    total = M * (M - 1) // 2
    subsampled = total > max_pairs

    def consider(i, j):
        nonlocal best, arg, count
        dist = _pdist(X[i], T[i], X[j], T[j], s)
        ok = dist > rho
        if not ok.any():
            return
        i, j, dist = i[ok], j[ok], dist[ok]
        q = np.abs(U[i] - U[j]) / dist ** alpha
        count += int(q.size)
        k = int(np.argmax(q))
        if arg is None or q[k] > best:
            best = float(q[k])
            arg = ((X[i[k]].copy(), float(T[i[k]])), (X[j[k]].copy(), float(T[j[k]])))

    if not subsampled:
        step = max(1, _BLOCK // max(M, 1))
        for a in range(0, M, step):
            rows = np.arange(a, min(M, a + step))
            ii, jj = np.meshgrid(rows, np.arange(M), indexing="ij")
            keep = jj > ii
            consider(ii[keep], jj[keep])
    else:
        log.info("subsampling %d of %d pairs (seed %d)", max_pairs, total, seed)
        rng = np.random.default_rng(seed)
        per = max(1, max_pairs // M)
        step = max(1, _BLOCK // per)
        for a in range(0, M, step):
            rows = np.arange(a, min(M, a + step))
            ii = np.repeat(rows, per)
            jj = rng.integers(0, M - 1, size=ii.size)
            jj = jj + (jj >= ii)
            consider(ii, jj)
    degenerate = count == 0
    return RegularityReport(alpha, best, rho, count, arg, degenerate, subsampled)


@dataclass
class HarnackReport:
    """Result of :func:`weak_harnack_ratio`."""

    inf_value: float
    weighted_mass: float
    forcing_bound: float
    empirical_c: float
    average: float = math.nan
    empirical_c_avg: float = math.nan
    degenerate: bool = False

    def to_record(self) -> dict:
        return asdict(self)


def weight_integral(d: int, s: float, R: float) -> float:
    """``int_{R^d} (R + |x|)^{-d-2s} dx = |S^{d-1}| R^{-2s} B(d, 2s)``."""
    return sphere_area(d) * R ** (-2.0 * s) * float(beta_fn(d, 2.0 * s))


def _exterior_level(field_: SpaceTimeField):
    """Minimum and far value of the extension over all snapshots."""
    ext = field_.grid.extension
    lows, fars = [], []
    for _, u in field_.snapshots:
        spec = u.spec
        if isinstance(spec.extension, Periodic):
            lows.append(float(np.min(u.values)))
        elif isinstance(spec.extension, Given):
            lows.append(min(float(np.min(spec.extension.exterior.values)),
                            float(spec.extension.value)))
        else:
            lows.append(float(spec.extension.value))
        fars.append(spec.far_value(u.values))
    del ext
    return min(lows), fars


def _time_cells(times, lo, hi):
    """Nearest-snapshot weights on ``(lo, hi]``: each snapshot owns the part
    of the interval closer to it than to its neighbours."""
    times = np.asarray(times, dtype=float)
    mids = 0.5 * (times[1:] + times[:-1])
    left = np.concatenate([[-np.inf], mids])
    right = np.concatenate([mids, [np.inf]])
    return np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None)


def weak_harnack_ratio(field_: SpaceTimeField, Q: Cylinder, a: float = 0.0) -> HarnackReport:
    """Empirical constant ``(inf_{Q_{R/2}} u + a) / weighted mass``.

    The weighted mass integrates ``u / (R + |x|)^{d+2s}`` over the box and the
    earlier time half ``(-R^{2s}, -(R/2)^{2s}]``; the part outside the box
    uses the far value of the extension and the closed-form weight integral.

    Raises
    ------
    HypothesisViolation
        If the field (including its extension) is negative anywhere.
    """
    if a < 0:
        raise ConfigError("forcing bound a must be nonnegative")
    if np.any(Q.x0 != 0) or Q.t0 != 0:
        raise ConfigError("weak Harnack cylinders are centred at the origin")
    vals = field_.values()
    low_ext, fars = _exterior_level(field_)
    if np.min(vals) < 0 or low_ext < 0:
        raise HypothesisViolation("field must be nonnegative everywhere")
    spec = field_.grid
    d, s, R = spec.d, Q.s, Q.R
    pts = spec.points()
    times = field_.times

    half = Q.scaled(0.5)
    tsel = half.time_mask(times)
    xsel = half.space_mask(pts)
    if not tsel.any() or not xsel.any():
        return HarnackReport(math.nan, math.nan, a, math.nan, degenerate=True)
    inf_value = float(np.min(vals[np.ix_(tsel, xsel)]))

    lo, hi = -R ** (2 * s), -(0.5 * R) ** (2 * s)
    tw = _time_cells(times, lo, hi)
    w = (R + np.sqrt(np.sum(pts ** 2, axis=1))) ** (-d - 2.0 * s)
    cell = spec.h ** d
    box_w = math.fsum(w * cell)
    tail_w = weight_integral(d, s, R) - box_w
    mass = 0.0
    for k in np.nonzero(tw)[0]:
        inside = math.fsum(vals[k] * w * cell)
        mass += tw[k] * (inside + fars[k] * tail_w)

    ball = Q.space_mask(pts)
    avg = math.nan
    if ball.any() and tw.sum() > 0:
        avg = float(sum(tw[k] * np.mean(vals[k][ball]) for k in np.nonzero(tw)[0]) / tw.sum())
    if mass <= 0:
        return HarnackReport(inf_value, 0.0, a, 0.0, avg, 0.0, degenerate=True)
    c = (inf_value + a) / mass
    c_avg = (inf_value + a) / avg if avg > 0 else 0.0
    return HarnackReport(inf_value, mass, a, c, avg, c_avg, False)


def oscillation_decay(field_: SpaceTimeField, R: float, levels: int, rho: float = 0.0,
                      center=None, s: Optional[float] = None) -> list:
    """``[(k, osc over Q_{4^{-k} R})]`` for ``k = 0..levels``.

    Levels whose radius falls below ``max(rho, 2h)`` or whose cylinder holds
    no stored node are dropped with a warning.
    """
    spec = field_.grid
    if s is None:
        if field_.params is None:
            raise ConfigError("the order s is needed to shape the cylinders")
        s = field_.params.s
    center = center if center is not None else (tuple([0.0] * spec.d), 0.0)
    floor = max(rho, 2.0 * spec.h)
    out = []
    for k in range(levels + 1):
        r = R * 4.0 ** (-k)
        if r < floor * (1 - 1e-12):
            log.warning("level %d (radius %g) is below the resolution floor %g", k, r, floor)
            break
        _, _, U = _collect(field_, Cylinder(center, r, s))
        if U.size == 0:
            log.warning("level %d cylinder contains no stored node", k)
            break
        out.append((k, float(np.max(U) - np.min(U))))
    return out


def estimate_alpha(field_: SpaceTimeField, Q: Cylinder, rho: float = 0.0):
    """Least-squares decay rate of ``osc_k`` against ``k log 4``.

    Returns
    -------
    alpha_hat : float
        NaN when every oscillation vanishes.
    info : dict
        ``levels``, ``osc``, ``residual`` and ``degenerate``.
    """
    floor = max(rho, 2.0 * field_.grid.h)
    levels = int(math.floor(math.log(Q.R / floor, 4) + 1e-12))
    osc = oscillation_decay(field_, Q.R, max(levels, 0), rho, Q.center, Q.s)
    if len(osc) < 3:
        raise NumericalError(f"only {len(osc)} oscillation levels are resolved; need 3")
    ks = np.array([k for k, _ in osc], dtype=float)
    vs = np.array([v for _, v in osc])
    pos = vs > 0
    info = {"levels": [int(k) for k in ks], "osc": [float(v) for v in vs]}
    if pos.sum() < 2:
        info.update(residual=math.nan, degenerate=True)
        return math.nan, info
    x = ks[pos] * math.log(4.0)
    y = np.log(vs[pos])
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    info.update(residual=float(res[0]) if len(res) else 0.0, degenerate=False)
    return float(-coef[0]), info
