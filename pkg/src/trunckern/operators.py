"""Lattice discretizations of nonlocal operators on box grids.

Every operator is evaluated node by node as a sum over integer offsets
``j`` (``0 < |j| h < Y``) with ``Y`` beyond the diameter of the region where
the grid function is not constant, plus

* a near-field term ``1/2 sum_i a_i D_i^2 u`` whose coefficients ``a_i`` are
  the kernel's second moments over the cube of ``2 * NEAR_CELLS + 1`` cells
  around the origin minus the lattice moments in that cube (so the scheme is
  exact on quadratics and keeps nonnegative weights);
* a far-field term ``T * (c - u(x))`` where ``T`` is the kernel mass beyond
  ``Y`` and ``c`` the value of the extension at infinity.

Symmetric kernels are summed over offset pairs ``(j, -j)`` so that the
gradient compensator cancels exactly.  The extremal operators use the dyadic
bang-bang construction: the lower kernel everywhere plus, on each annulus
``2^i h <= |y| < 2^(i+1) h``, the left-over mass budget placed where
``delta_y u`` is extremal.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericalError
from .grid import Constant, Given, GridFunction, GridSpec, Periodic
from .kernels import (KernelFn, KernelParams, ball_integral, exterior_integral,
                      lower_kernel, radial_moment, _gauss)

log = logging.getLogger(__name__)

NEAR_CELLS = 4
_CHUNK = 1 << 20
_TAIL_ANNULI = 300
KINDS = ("linear", "pucci_minus", "pucci_plus", "isaac")


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True, eq=False)
class IsaacMember:
    """One linear operator ``b . grad u + L_K u`` of an Isaac family."""

    kernel: KernelFn
    drift: Optional[tuple] = None


@dataclass(frozen=True, eq=False)
class OperatorConfig:
    """Which operator to apply and how.

    Parameters
    ----------
    params : KernelParams
    kind : {"linear", "pucci_minus", "pucci_plus", "isaac"}
    kernel : KernelFn, optional
        Required for ``kind="linear"``.
    family : sequence of sequences of IsaacMember
        ``family[alpha][beta]``; required for ``kind="isaac"``.
    drift : vector or array of shape (n**d, d), optional
        Drift ``b`` of a linear operator.
    envelope : float
        For the extremal kinds, adds ``+envelope |grad u|`` (plus) or
        ``-envelope |grad u|`` (minus).
    near_field_mode : {"second_difference", "drop"}
    compensator_radius : float
        Radius of the gradient compensator when ``s = 1/2``.
    """

    params: KernelParams
    kind: str = "linear"
    kernel: Optional[KernelFn] = None
    family: tuple = ()
    drift: Optional[object] = None
    envelope: float = 0.0
    near_field_mode: str = "second_difference"
    compensator_radius: float = 1.0

    def __post_init__(self):
        p = self.params
        if self.kind not in KINDS:
            raise ConfigError(f"unknown operator kind {self.kind!r}")
        if self.near_field_mode not in ("second_difference", "drop"):
            raise ConfigError(f"unknown near-field mode {self.near_field_mode!r}")
        if self.kind == "linear" and self.kernel is None:
            raise ConfigError("a linear operator needs a kernel")
        if self.kind == "isaac":
            fam = tuple(tuple(row) for row in self.family)
            if not fam or any(len(row) == 0 for row in fam):
                raise ConfigError("Isaac family must be nonempty")
            object.__setattr__(self, "family", fam)
        has_drift = self.drift is not None and np.any(np.asarray(self.drift) != 0)
        has_drift = has_drift or self.envelope > 0
        if self.kind == "isaac":
            for row in self.family:
                for m in row:
                    if m.drift is not None and np.any(np.asarray(m.drift) != 0):
                        has_drift = True
                        if np.max(np.abs(m.drift)) > p.Lam * (1 + 1e-12):
                            raise ConfigError("Isaac drift exceeds Lambda")
        if has_drift and p.s < 0.5:
            raise ConfigError("drift requires s ≥ 1/2")
        if self.drift is not None:
            b = np.asarray(self.drift, dtype=float)
            if np.any(~np.isfinite(b)) or np.max(np.linalg.norm(np.atleast_2d(b), axis=-1)) > p.Lam * (1 + 1e-12):
                raise ConfigError("drift must be bounded by Lambda")
        if self.envelope < 0:
            raise ConfigError("envelope bound must be nonnegative")


# ---------------------------------------------------------------------------
# lattice

@dataclass
class Lattice:
    """Offsets, annulus bins and flat gather indices for one grid layout."""

    d: int
    n: int
    h: float
    Y: float
    pad: int
    off: np.ndarray        # (J, d) half set of integer offsets
    radius: np.ndarray     # (J,) |j| h
    ann: np.ndarray        # (J,) dyadic annulus index
    starts: np.ndarray     # first column of each annulus present
    ann_ids: np.ndarray    # annulus index of each bin
    delta: np.ndarray      # (J,) flat gather offsets in the padded array
    base: np.ndarray       # (N,) flat index of every node in the padded array
    strides: np.ndarray    # (d,)
    edge_cols: np.ndarray  # offsets on the outer sphere of the previous bin
    edge_bins: np.ndarray  # that previous bin


def _reach(spec: GridSpec) -> float:
    d, L, h = spec.d, spec.L, spec.h
    if isinstance(spec.extension, Given):
        L_out = spec.extension.exterior.spec.L
        return (L + L_out) * math.sqrt(d) + 0.5 * h
    return 2.0 * L * math.sqrt(d) + 0.5 * h


def _lattice_key(spec: GridSpec) -> tuple:
    return (spec.d, spec.n, spec.h, _reach(spec))


@lru_cache(maxsize=16)
def _build_lattice(key) -> Lattice:
    d, n, h, Y = key
    m = int(math.floor(Y / h))
    r2max = (Y / h) ** 2
    axes = [np.arange(-m, m + 1)] * d
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    r2 = np.sum(grid.astype(np.int64) ** 2, axis=1)
    nz = grid != 0
    first = np.argmax(nz, axis=1)
    lead = grid[np.arange(len(grid)), first]
    keep = (r2 > 0) & (r2 < r2max) & (lead > 0)
    off = grid[keep]
    r2 = r2[keep]
    order = np.lexsort(tuple(off[:, k] for k in reversed(range(d))) + (r2,))
    off = off[order]
    r2 = r2[order]
    ann = np.array([(int(v).bit_length() - 1) // 2 for v in r2], dtype=int)
    change = np.nonzero(np.diff(ann))[0] + 1
    starts = np.concatenate([[0], change]).astype(int)
    pad = int(np.max(np.abs(off))) if len(off) else 1
    pad = max(pad, 1)
    size = n + 2 * pad
    strides = np.array([size ** (d - 1 - k) for k in range(d)], dtype=np.int64)
    delta = off.astype(np.int64) @ strides
    idx = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(n)] * d), indexing="ij")], axis=1)
    base = (idx + pad).astype(np.int64) @ strides
    ann_ids = ann[starts]
    # |j| = 2^k closes the annulus [2^(k-1), 2^k) of the previous bin
    is_edge = np.array([v > 1 and (v & (v - 1)) == 0 and (int(v).bit_length() - 1) % 2 == 0
                        for v in r2], dtype=bool)
    pos = np.searchsorted(ann_ids, ann - 1)
    is_edge &= (pos < len(ann_ids)) & (ann_ids[np.minimum(pos, len(ann_ids) - 1)] == ann - 1)
    edge_cols = np.nonzero(is_edge)[0]
    return Lattice(d, n, h, Y, pad, off, np.sqrt(r2) * h, ann, starts, ann_ids,
                   delta, base, strides, edge_cols, pos[edge_cols])


def lattice_for(spec: GridSpec) -> Lattice:
    return _build_lattice(_lattice_key(spec))


# ---------------------------------------------------------------------------
# near-field moments

def _square_corner_moments(kernel: KernelFn, a: float, rtol: float = 1e-11):
    """Moments ``[y1^2, y2^2, y1, y2]`` of K over ``[-a, a]^2`` minus the disc
    of radius ``a``."""
    rho = kernel.params.rho

    def once(n):
        x, w = _gauss(n)
        tot = np.zeros(4)
        for k in range(8):
            t0, t1 = k * np.pi / 4, (k + 1) * np.pi / 4
            th = 0.5 * (t1 - t0) * x + 0.5 * (t1 + t0)
            wt = 0.5 * (t1 - t0) * w
            rmax = a / np.maximum(np.abs(np.cos(th)), np.abs(np.sin(th)))
            for lo_f, hi_f in ((lambda r: np.full_like(r, a), lambda r: np.clip(rho, a, r) if rho > 0 else np.full_like(r, a)),
                               (lambda r: np.clip(rho, a, r) if rho > 0 else np.full_like(r, a), lambda r: r)):
                lo, hi = lo_f(rmax), hi_f(rmax)
                span = hi - lo
                r = 0.5 * span[:, None] * x[None, :] + 0.5 * (hi + lo)[:, None]
                wr = 0.5 * span[:, None] * w[None, :] * r
                pts = np.stack([r * np.cos(th)[:, None], r * np.sin(th)[:, None]], axis=-1)
                kv = kernel(pts.reshape(-1, 2)).reshape(r.shape) * wr * wt[:, None]
                y1, y2 = pts[..., 0], pts[..., 1]
                tot += np.array([np.sum(kv * y1 ** 2), np.sum(kv * y2 ** 2),
                                 np.sum(kv * y1), np.sum(kv * y2)])
        return tot

    n = 16
    prev = once(n)
    for _ in range(6):
        n *= 2
        cur = once(n)
        if np.max(np.abs(cur - prev)) <= rtol * np.max(np.abs(cur[:2])):
            return cur
        prev = cur
    log.debug("corner moment quadrature stopped at relative change %.2e",
              np.max(np.abs(cur - prev)) / max(np.max(np.abs(cur[:2])), 1e-300))
    return cur


def near_moments(kernel: KernelFn, h: float, cells: int = NEAR_CELLS):
    """Per-axis second and first moments of ``kernel`` over the near region.

    The region is the cube of half-width ``(cells + 1/2) h`` (a ball of that
    radius when ``d >= 3``).  Returns ``(second, first, cube)``.  The first
    moment is only needed for asymmetric kernels with ``s < 1/2``, where it
    converges absolutely; it is reported as zero otherwise.
    """
    d = kernel.params.d
    a = (cells + 0.5) * h
    isotropic = kernel.radial_moment is not None
    want_first = not kernel.is_symmetric and kernel.params.s < 0.5
    if want_first:
        weight = lambda y: np.concatenate([y ** 2, y], axis=-1)
    else:
        weight = lambda y: y ** 2
    first = np.zeros(d)
    if d == 1 or d >= 3:
        if isotropic:
            second = np.full(d, radial_moment(kernel, 2.0, 0.0, a) / d)
        else:
            vec = np.asarray(ball_integral(kernel, a, weight))
            second = vec[:d]
            if want_first:
                first = vec[d:]
        return second, first, d <= 2
    if isotropic:
        disc2 = np.full(2, radial_moment(kernel, 2.0, 0.0, a) / 2.0)
        disc1 = np.zeros(2)
    else:
        vec = np.asarray(ball_integral(kernel, a, weight))
        disc2 = vec[:2]
        disc1 = vec[2:] if want_first else np.zeros(2)
    corner = _square_corner_moments(kernel, a)
    if want_first:
        first = disc1 + corner[2:]
    return disc2 + corner[:2], first, True


def _near_coefficients(kernel, lat: Lattice, wp, wm, mode):
    d, h = lat.d, lat.h
    if mode == "drop":
        return np.zeros(d), np.zeros(d)
    second, first, cube = near_moments(kernel, h)
    y = lat.off * h
    if cube:
        inside = np.max(np.abs(lat.off), axis=1) <= NEAR_CELLS
    else:
        inside = lat.radius < (NEAR_CELLS + 0.5) * h
    lat2 = ((y[inside] ** 2) * (wp[inside] + wm[inside])[:, None]).sum(axis=0)
    lat1 = (y[inside] * (wp[inside] - wm[inside])[:, None]).sum(axis=0)
    a = second - lat2
    if np.any(a < 0):
        log.warning("negative near-field coefficient %s clipped to zero", a)
        a = np.maximum(a, 0.0)
    m1 = np.zeros(d) if kernel.is_symmetric else first - lat1
    return a, m1


# ---------------------------------------------------------------------------
# linear stencils

@dataclass
class LinearStencil:
    """Discrete linear operator: lattice weights, near and far coefficients.

    ``wp[k]``/``wm[k]`` weight the offsets ``+off[k]`` and ``-off[k]``; ``a``
    are near-field second-moment coefficients; ``tail`` the far mass;
    ``v`` an effective drift collecting first-moment corrections.
    """

    lattice: Lattice
    wp: np.ndarray
    wm: np.ndarray
    a: np.ndarray
    tail: float
    v: np.ndarray
    symmetric: bool
    s: float
    comp_radius: float = 1.0

    @property
    def mass(self) -> float:
        """Diagonal weight of the stencil (used for the time-step bound)."""
        h = self.lattice.h
        return float(np.sum(self.wp) + np.sum(self.wm) + np.sum(self.a) / h ** 2
                     + self.tail + np.sum(np.abs(self.v)) / h)


@lru_cache(maxsize=32)
def _linear_stencil(key, kernel: KernelFn, mode: str, comp_radius: float) -> LinearStencil:
    lat = _build_lattice(key)
    p = kernel.params
    h, d = lat.h, lat.d
    y = lat.off * h
    wp = kernel(y) * h ** d
    wm = wp.copy() if kernel.is_symmetric else kernel(-y) * h ** d
    if not (np.all(np.isfinite(wp)) and np.all(np.isfinite(wm))):
        raise NumericalError("kernel is not finite on the lattice")
    if np.any(wp < 0) or np.any(wm < 0):
        raise NumericalError("kernel is negative on the lattice")
    if p.rho > 0 and p.rho < h:
        log.warning("truncation rho=%g is below the grid spacing h=%g", p.rho, h)
    a, m1 = _near_coefficients(kernel, lat, wp, wm, mode)
    if kernel.radial_moment is not None:
        tail = radial_moment(kernel, 0.0, lat.Y, math.inf)
    else:
        tail = float(exterior_integral(kernel, lat.Y))
    v = np.zeros(d)
    if not kernel.is_symmetric:
        if p.s < 0.5:
            v = m1
        else:
            within = lat.radius < comp_radius if p.s == 0.5 else np.ones(len(y), bool)
            v = -(y[within] * (wp[within] - wm[within])[:, None]).sum(axis=0)
            if p.s > 0.5:
                v = v - np.asarray(exterior_integral(kernel, lat.Y, lambda z: z))
    return LinearStencil(lat, wp, wm, a, float(tail), np.asarray(v, float),
                         kernel.is_symmetric, p.s, comp_radius)


def linear_stencil(spec: GridSpec, kernel: KernelFn, mode: str = "second_difference",
                   compensator_radius: float = 1.0) -> LinearStencil:
    """Build (and cache) the discrete stencil of ``L_K`` on ``spec``."""
    return _linear_stencil(_lattice_key(spec), kernel, mode, float(compensator_radius))


# ---------------------------------------------------------------------------
# finite-difference helpers

def _neighbors(flat, lat: Lattice, rows):
    """Values at x - e_i, x, x + e_i for the selected rows."""
    base = lat.base[rows]
    centre = flat[base]
    minus = np.stack([flat[base - st] for st in lat.strides], axis=1)
    plus = np.stack([flat[base + st] for st in lat.strides], axis=1)
    return minus, centre, plus


def _shifted(flat, lat: Lattice, chunk):
    """Values ``u(x + j h)`` and ``u(x - j h)`` for every offset, shape
    ``(rows, J)``.  In one dimension these are strided views of ``flat``."""
    if lat.d == 1:
        pad, J = lat.pad, lat.off.shape[0]
        win = sliding_window_view(flat, 2 * pad + 1)
        lo = int(chunk[0])
        if chunk.size == int(chunk[-1]) - lo + 1:
            win = win[lo:lo + chunk.size]
        else:
            win = win[chunk]
        return win[:, pad + 1:pad + 1 + J], win[:, pad - J:pad][:, ::-1]
    base = lat.base[chunk]
    return flat[base[:, None] + lat.delta[None, :]], flat[base[:, None] - lat.delta[None, :]]


def _second_differences(minus, centre, plus, h):
    return ((plus - centre[:, None]) + (minus - centre[:, None])) / h ** 2


def _gradient(minus, centre, plus, h, mode):
    if mode == "centered":
        return (plus - minus) / (2.0 * h)
    return (plus - centre[:, None]) / h, (centre[:, None] - minus) / h


def _drift_term(b, minus, centre, plus, h, mode):
    if mode == "centered":
        return np.sum(b * (plus - minus) / (2.0 * h), axis=1)
    fwd = (plus - centre[:, None]) / h
    bwd = (centre[:, None] - minus) / h
    return np.sum(np.where(b > 0, b * fwd, b * bwd), axis=1)


def _up_norm(minus, centre, plus, h, sign):
    """Monotone one-sided gradient norm: ``sign=+1`` approximates ``|grad u|``
    for a term entering with a plus sign, ``sign=-1`` for a minus sign."""
    fwd = (plus - centre[:, None]) / h
    bwd = (centre[:, None] - minus) / h
    if sign > 0:
        comp = np.maximum(np.maximum(fwd, -bwd), 0.0)
    else:
        comp = np.maximum(np.maximum(-fwd, bwd), 0.0)
    return np.sqrt(np.sum(comp ** 2, axis=1))


def _rows(nodes, lat: Lattice):
    if nodes is None:
        return np.arange(lat.base.size)
    return np.atleast_1d(np.asarray(nodes, dtype=np.int64))


def _chunks(rows, J):
    step = max(1, _CHUNK // max(J, 1))
    for k in range(0, rows.size, step):
        yield rows[k:k + step]


def _check_finite(out, rows, what):
    bad = ~np.isfinite(out)
    if bad.any():
        raise NumericalError(f"{what} is not finite at node {int(rows[np.argmax(bad)])}")


def _finish(u: GridFunction, out, nodes):
    if nodes is None:
        return GridFunction(u.spec, out.reshape(u.spec.shape))
    return out


# ---------------------------------------------------------------------------
# single differences

def apply_difference(u: GridFunction, x, y, s: float, gradient_at_x=None,
                     compensator_radius: float = 1.0) -> float:
    """``delta_y u(x)`` with the compensator prescribed by ``s``.

    ``u`` is evaluated through its extension (nearest node) at ``x`` and
    ``x + y``.  ``gradient_at_x`` is required when ``s >= 1/2``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    val = float(u.evaluate((x + y)[None, :])[0] - u.evaluate(x[None, :])[0])
    if s < 0.5:
        return val
    if gradient_at_x is None:
        raise ConfigError("gradient_at_x is required when s >= 1/2")
    g = np.atleast_1d(np.asarray(gradient_at_x, dtype=float))
    if s == 0.5 and np.linalg.norm(y) >= compensator_radius:
        return val
    return val - float(y @ g)


def grid_gradient(u: GridFunction, mode: str = "centered") -> np.ndarray:
    """Centered-difference gradient at every node, shape ``(n**d, d)``."""
    lat = lattice_for(u.spec)
    flat = u.padded(lat.pad).ravel()
    rows = np.arange(lat.base.size)
    minus, centre, plus = _neighbors(flat, lat, rows)
    return _gradient(minus, centre, plus, lat.h, "centered")


# ---------------------------------------------------------------------------
# linear operators

def apply_stencil(u: GridFunction, st: LinearStencil, drift=None, gradient: str = "centered",
                  nodes=None, symmetrize: bool = True) -> np.ndarray:
    """Apply a :class:`LinearStencil` (plus an optional drift) to ``u``.

    Returns a flat array over the selected nodes.
    """
    lat = st.lattice
    flat = u.padded(lat.pad).ravel()
    c_far = u.spec.far_value(u.values)
    rows = _rows(nodes, lat)
    h = lat.h
    out = np.empty(rows.size)
    pos = 0
    b = None if drift is None else np.asarray(drift, dtype=float)
    per_offset = not symmetrize and st.s >= 0.5
    if per_offset:
        y = lat.off * h
        within = (lat.radius < st.comp_radius) if st.s == 0.5 else np.ones(len(y), bool)
    for chunk in _chunks(rows, lat.delta.size):
        Up, Um = _shifted(flat, lat, chunk)
        minus, centre, plus = _neighbors(flat, lat, chunk)
        u0 = centre
        if per_offset:
            g = _gradient(minus, centre, plus, h, "centered")
            comp = (g @ y.T) * within[None, :]
            far = (((Up - u0[:, None]) - comp) @ st.wp) + (((Um - u0[:, None]) + comp) @ st.wm)
        elif st.symmetric:
            P = Up + Um
            P -= 2.0 * u0[:, None]
            far = P @ st.wp
        else:
            far = ((Up - u0[:, None]) @ st.wp) + ((Um - u0[:, None]) @ st.wm)
        near = (_second_differences(minus, centre, plus, h) * (0.5 * st.a)).sum(axis=1)
        val = far + near + st.tail * (c_far - u0)
        vel = st.v if b is None else st.v + (b[chunk] if b.ndim == 2 else b)
        if not per_offset and np.any(vel != 0):
            vel = np.broadcast_to(vel, minus.shape)
            val = val + _drift_term(vel, minus, centre, plus, h, gradient)
        elif per_offset and b is not None:
            bb = np.broadcast_to(b[chunk] if b.ndim == 2 else b, minus.shape)
            val = val + _drift_term(bb, minus, centre, plus, h, gradient)
        out[pos:pos + chunk.size] = val
        pos += chunk.size
    _check_finite(out, rows, "linear operator")
    return out


def apply_linear(u: GridFunction, cfg: OperatorConfig, nodes=None, gradient: str = "centered",
                 symmetrize: bool = True):
    """Evaluate ``L_K u + b . grad u`` on the grid.

    Parameters
    ----------
    u : GridFunction
    cfg : OperatorConfig
        ``kind`` must be ``"linear"``.
    nodes : array of int, optional
        Flat node indices; when given, an array of values at those nodes is
        returned instead of a GridFunction.
    gradient : {"centered", "upwind"}
        Difference used for drift and compensator terms.
    symmetrize : bool
        When False and ``s >= 1/2``, evaluate each ``delta_y`` with its own
        gradient compensator (cut at ``compensator_radius`` for s = 1/2).
    """
    if cfg.kind != "linear":
        raise ConfigError("apply_linear needs kind='linear'")
    st = linear_stencil(u.spec, cfg.kernel, cfg.near_field_mode, cfg.compensator_radius)
    out = apply_stencil(u, st, cfg.drift, gradient, nodes, symmetrize)
    return _finish(u, out, nodes)


# ---------------------------------------------------------------------------
# extremal operators

@dataclass
class PucciData:
    """Precomputed pieces of the bang-bang extremal operators."""

    lattice: Lattice
    w_low: np.ndarray          # (J,) weight of each offset (same for +j and -j)
    a_low: np.ndarray          # (d,)
    tail_low: float
    slack_lat: np.ndarray      # (bins,) slack of the lattice annulus bins
    l1_lat: np.ndarray         # (bins,) max |j|_1 inside each bin
    split: bool                # last lattice bin continues beyond Y
    split_outer: float         # outer radius of that bin
    tail_slack: np.ndarray     # slack of the annuli entirely beyond Y
    tail_outer: np.ndarray     # their outer radii
    near_slack: float          # second-moment budget below h
    near_slack1: float         # first-moment budget below h (used when s < 1/2)
    s: float

    def mass(self, upwind: bool = True, envelope: float = 0.0) -> float:
        h, d = self.lattice.h, self.lattice.d
        grad = self.s > 0.5 and upwind
        m = 2.0 * np.sum(self.w_low) + np.sum(self.a_low) / h ** 2 + self.near_slack / h ** 2
        m += self.near_slack1 * math.sqrt(d) / h
        m += self.tail_low + np.sum(self.slack_lat * (1.0 + (self.l1_lat if grad else 0.0)))
        extra = math.sqrt(d) / h if grad else 0.0
        m += np.sum(self.tail_slack * (1.0 + self.tail_outer * extra))
        if self.split and grad:
            m += self.slack_lat[-1] * self.split_outer * math.sqrt(d) / h
        return float(m + envelope * math.sqrt(d) / h)


def _low_mass(low: KernelFn, a: float, b: float) -> float:
    return radial_moment(low, 0.0, a, b) if b > a else 0.0


@lru_cache(maxsize=16)
def _pucci_data(key, params: KernelParams, mode: str) -> PucciData:
    lat = _build_lattice(key)
    low = lower_kernel(params)
    st = _linear_stencil(key, low, mode, 1.0)
    h, s, Lam = lat.h, params.s, params.Lam
    caps = Lam * (h * 2.0 ** lat.ann_ids.astype(float)) ** (-2.0 * s)
    pair = 2.0 * st.wp
    lat_mass = np.add.reduceat(pair, lat.starts)
    l1 = np.maximum.reduceat(np.sum(np.abs(lat.off), axis=1), lat.starts).astype(float)
    last = int(lat.ann_ids[-1])
    outer_last = h * 2.0 ** (last + 1)
    split = outer_last > lat.Y
    if split:
        lat_mass[-1] += _low_mass(low, lat.Y, outer_last)
    slack_lat = np.maximum(0.0, caps - lat_mass)
    first_tail = last + 1
    if not split and lat.Y > h * 2.0 ** first_tail:
        raise NumericalError("lattice reach is inconsistent with its annuli")
    idx = np.arange(first_tail, first_tail + _TAIL_ANNULI)
    r_in = h * 2.0 ** idx.astype(float)
    lo = np.maximum(r_in, lat.Y)
    tail_mass = np.array([_low_mass(low, a, 2.0 * r) for a, r in zip(lo, r_in)])
    tail_slack = np.maximum(0.0, Lam * r_in ** (-2.0 * s) - tail_mass)
    near = near1 = 0.0
    if mode != "drop":
        for i in range(-1, -2000, -1):
            r = h * 2.0 ** i
            slack = max(0.0, Lam * r ** (-2.0 * s) - _low_mass(low, r, 2.0 * r))
            near += slack * (2.0 * r) ** 2
            if s < 0.5:
                near1 += slack * 2.0 * r
            term = slack * 2.0 * r if s < 0.5 else slack * (2.0 * r) ** 2
            if term <= 1e-17 * (near1 if s < 0.5 else near):
                break
    return PucciData(lat, st.wp, st.a, st.tail, slack_lat, l1, split, outer_last,
                     tail_slack, 2.0 * r_in, near, near1, s)


def pucci_data(spec: GridSpec, params: KernelParams, mode: str = "second_difference") -> PucciData:
    return _pucci_data(_lattice_key(spec), params, mode)


def cap_violation(spec: GridSpec, kernel: KernelFn, mode: str = "second_difference") -> float:
    """Largest breach of the discrete annulus caps by a symmetric kernel.

    The extremal operators bound ``L_K`` node-wise only when the sampled
    stencil of ``K`` sits between the lower kernel and the caps on the same
    lattice: every pair weight dominates the lower one, every lattice bin,
    the far field and the near field stay within their slack.  Returns the
    worst breach relative to the corresponding budget; a value ``<= 0``
    means ``K`` satisfies all of them on ``spec``.
    """
    if not kernel.is_symmetric:
        raise ConfigError("cap_violation handles symmetric kernels only")
    pd = pucci_data(spec, kernel.params, mode)
    st = linear_stencil(spec, kernel, mode)
    lat = pd.lattice
    low = lower_kernel(kernel.params)
    excess = 2.0 * (st.wp - pd.w_low)
    scale = np.add.reduceat(2.0 * pd.w_low, lat.starts) + pd.slack_lat
    worst = float(np.max(-excess / np.repeat(scale, np.diff(np.append(lat.starts, excess.size)))))
    bins = np.add.reduceat(excess, lat.starts)
    split = 0.0
    if pd.split:
        split = radial_moment(kernel, 0.0, lat.Y, pd.split_outer) - _low_mass(low, lat.Y, pd.split_outer)
        bins[-1] += split
    worst = max(worst, float(np.max((bins - pd.slack_lat) / scale)))
    far = st.tail - pd.tail_low - split
    far_budget = float(np.sum(pd.tail_slack))
    far_scale = pd.tail_low + far_budget
    worst = max(worst, (far - far_budget) / far_scale, -min(far, split, 0.0) / far_scale)
    if mode != "drop":
        near = st.a - pd.a_low
        near_scale = float(np.max(pd.a_low)) + pd.near_slack
        worst = max(worst, float(np.max(near - pd.near_slack)) / near_scale,
                    float(np.max(-near)) / near_scale)
    return worst


def apply_pucci(u: GridFunction, cfg: OperatorConfig, nodes=None, gradient: str = "centered"):
    """Evaluate the bang-bang extremal operator selected by ``cfg.kind``."""
    if cfg.kind not in ("pucci_plus", "pucci_minus"):
        raise ConfigError("apply_pucci needs kind='pucci_plus' or 'pucci_minus'")
    sign = 1 if cfg.kind == "pucci_plus" else -1
    pd = pucci_data(u.spec, cfg.params, cfg.near_field_mode)
    out = _apply_extremal(u, pd, sign, gradient, nodes, cfg.envelope)
    return _finish(u, out, nodes)


def _apply_extremal(u, pd: PucciData, sign, gradient, nodes, envelope):
    lat = pd.lattice
    flat = u.padded(lat.pad).ravel()
    rows = _rows(nodes, lat)
    h, s = lat.h, pd.s
    y = lat.off * h
    ext = np.maximum if sign > 0 else np.minimum
    clip = (lambda z: np.maximum(z, 0.0)) if sign > 0 else (lambda z: np.minimum(z, 0.0))
    periodic = u.spec.periodic
    c_far = u.spec.far_value(u.values)
    if periodic:
        far_ext = float(np.max(u.values)) if sign > 0 else float(np.min(u.values))
    if s < 0.5 or gradient == "centered":
        sel_p = sel_m = None
    else:
        sel_p = lat.off < 0     # coefficient of grad u for +j is -y: forward where y < 0
        sel_m = lat.off > 0
    out = np.empty(rows.size)
    pos = 0
    for chunk in _chunks(rows, lat.delta.size):
        Up, Um = _shifted(flat, lat, chunk)
        minus, centre, plus = _neighbors(flat, lat, chunk)
        u0 = centre
        P = Up + Um
        P -= 2.0 * u0[:, None]
        base_sum = P @ pd.w_low
        if s < 0.5:
            E = ext(Up, Um)
            shift = -u0
        elif s == 0.5:
            E = P
            E *= 0.5
            shift = None
        else:
            if gradient == "centered":
                g = _gradient(minus, centre, plus, h, "centered")
                comp = g @ y.T
                E = ext(Up - comp, Um + comp)
            else:
                fwd, bwd = _gradient(minus, centre, plus, h, "upwind")
                yh = np.abs(y)
                # -y.grad u for +j and +y.grad u for -j, each component upwinded
                cp = np.zeros((chunk.size, y.shape[0]))
                cm = np.zeros((chunk.size, y.shape[0]))
                for k in range(lat.d):
                    cp += np.where(sel_p[:, k][None, :], yh[:, k][None, :] * fwd[:, k:k + 1],
                                   -yh[:, k][None, :] * bwd[:, k:k + 1])
                    cm += np.where(sel_m[:, k][None, :], yh[:, k][None, :] * fwd[:, k:k + 1],
                                   -yh[:, k][None, :] * bwd[:, k:k + 1])
                E = ext(Up + cp, Um + cm)
            shift = -u0
        bins = ext.reduceat(E, lat.starts, axis=1)
        for c, b in zip(lat.edge_cols, lat.edge_bins):
            bins[:, b] = ext(bins[:, b], E[:, c])
        if shift is not None:
            bins += shift[:, None]
        A = (far_ext if periodic else c_far) - u0
        if s > 0.5:
            if gradient == "centered":
                G = np.linalg.norm(_gradient(minus, centre, plus, h, "centered"), axis=1)
            else:
                G = _up_norm(minus, centre, plus, h, sign)
        if pd.split:
            edge = A + sign * pd.split_outer * G if s > 0.5 else A
            bins[:, -1] = ext(bins[:, -1], edge)
        lat_part = (clip(bins) * pd.slack_lat).sum(axis=1)
        d2 = _second_differences(minus, centre, plus, h)
        near_base = (d2 * (0.5 * pd.a_low)).sum(axis=1)
        near_ext = 0.5 * pd.near_slack * clip(ext.reduce(d2, axis=1))
        if pd.near_slack1 > 0:
            if gradient == "centered":
                G0 = np.linalg.norm(_gradient(minus, centre, plus, h, "centered"), axis=1)
            else:
                G0 = _up_norm(minus, centre, plus, h, sign)
            near_ext = near_ext + sign * pd.near_slack1 * G0
        tail_base = pd.tail_low * (c_far - u0)
        if s > 0.5:
            tail_ext = (clip(A[:, None] + sign * pd.tail_outer[None, :] * G[:, None])
                        * pd.tail_slack).sum(axis=1)
        else:
            tail_ext = clip(A) * np.sum(pd.tail_slack)
        val = base_sum + lat_part + near_base + near_ext + tail_base + tail_ext
        if envelope > 0:
            if gradient == "centered":
                G1 = np.linalg.norm(_gradient(minus, centre, plus, h, "centered"), axis=1)
            else:
                G1 = _up_norm(minus, centre, plus, h, sign)
            val = val + sign * envelope * G1
        out[pos:pos + chunk.size] = val
        pos += chunk.size
    _check_finite(out, rows, "extremal operator")
    return out


# ---------------------------------------------------------------------------
# Isaac operators and envelopes

def _member_config(params, member: IsaacMember, mode):
    return OperatorConfig(params, "linear", member.kernel, drift=member.drift,
                          near_field_mode=mode)


def apply_isaac(u: GridFunction, cfg: OperatorConfig, nodes=None, gradient: str = "centered"):
    """Node-wise ``min_alpha max_beta (b . grad u + L_K u)`` over the family."""
    if cfg.kind != "isaac":
        raise ConfigError("apply_isaac needs kind='isaac'")
    if not cfg.family:
        raise ConfigError("Isaac family must be nonempty")
    outer = None
    for row in cfg.family:
        inner = None
        for member in row:
            v = apply_linear(u, _member_config(cfg.params, member, cfg.near_field_mode),
                             nodes=nodes if nodes is not None else np.arange(u.spec.size),
                             gradient=gradient)
            inner = v if inner is None else np.maximum(inner, v)
        outer = inner if outer is None else np.minimum(outer, inner)
    return _finish(u, outer, nodes)


def drift_envelope(u: GridFunction, Lambda: float, mode: str = "centered") -> GridFunction:
    """``Lambda |grad u|`` with centered differences, or its monotone upwind
    version ``Lambda |(max(D+ u, -D- u, 0))_i|`` when ``mode="upwind"``."""
    lat = lattice_for(u.spec)
    flat = u.padded(lat.pad).ravel()
    rows = np.arange(lat.base.size)
    minus, centre, plus = _neighbors(flat, lat, rows)
    if mode == "centered":
        g = np.linalg.norm(_gradient(minus, centre, plus, lat.h, "centered"), axis=1)
    else:
        g = _up_norm(minus, centre, plus, lat.h, +1)
    return GridFunction(u.spec, (Lambda * g).reshape(u.spec.shape))


# ---------------------------------------------------------------------------
# dispatch

def apply_operator(u: GridFunction, cfg: OperatorConfig, gradient: str = "centered",
                   nodes=None):
    """Evaluate ``F(u)`` for any operator kind."""
    if cfg.kind == "linear":
        return apply_linear(u, cfg, nodes=nodes, gradient=gradient)
    if cfg.kind == "isaac":
        return apply_isaac(u, cfg, nodes=nodes, gradient=gradient)
    return apply_pucci(u, cfg, nodes=nodes, gradient=gradient)


def operator_mass(spec: GridSpec, cfg: OperatorConfig) -> float:
    """Largest diagonal weight of the monotone (upwind) discretization."""
    h, d = spec.h, spec.d
    if cfg.kind == "linear":
        st = linear_stencil(spec, cfg.kernel, cfg.near_field_mode, cfg.compensator_radius)
        m = st.mass
        if cfg.drift is not None:
            b = np.atleast_2d(np.asarray(cfg.drift, dtype=float))
            m += float(np.max(np.sum(np.abs(b + st.v), axis=1) - np.sum(np.abs(st.v)))) / h
        return m
    if cfg.kind == "isaac":
        return max(operator_mass(spec, _member_config(cfg.params, m, cfg.near_field_mode))
                   for row in cfg.family for m in row)
    return pucci_data(spec, cfg.params, cfg.near_field_mode).mass(True, cfg.envelope)
