"""Independent reference computations used to check the discrete operators.

Everything here is deliberately slow and direct: adaptive quadrature of the
nonlocal integral, a closed-form half-Laplacian example, dyadic moment bounds
and scaling checks for extremal operators applied to bump functions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from .errors import ConfigError, QuadratureError
from .grid import Constant, GridFunction, GridSpec
from .kernels import (KernelFn, KernelParams, _gauss, ball_volume, make_user_kernel,
                      polar_nodes, radial_moment, sphere_area)
from .operators import OperatorConfig, apply_linear, apply_pucci

log = logging.getLogger(__name__)

SHELL_RTOL = 1e-9
CROSS_CHECK_TOL = 1e-6
SHELL_MIN_EXP = -20
SHELL_MAX_EXP = 20
_MAX_GAUSS = 1 << 12

# quintic smoothstep P(t) = 10t^3 - 15t^4 + 6t^5 on t = 2r - 1
_SMOOTHSTEP = Polynomial([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])


@dataclass(frozen=True)
class BumpProfile:
    """Radial cut-off ``eta(x) = beta(|x| / R)``.

    ``beta`` equals 1 on ``[0, 1/2]``, 0 on ``[1, inf)`` and ``1 - P(2r - 1)``
    in between, with ``P`` the quintic smoothstep; it is ``C^2`` with
    ``-15/4 <= beta' <= 0``.
    """

    R: float = 1.0

    def __post_init__(self):
        if not self.R > 0:
            raise ConfigError("bump radius must be positive")

    @staticmethod
    def beta(r):
        r = np.asarray(r, dtype=float)
        t = np.clip(2.0 * r - 1.0, 0.0, 1.0)
        return 1.0 - _SMOOTHSTEP(t)

    @staticmethod
    def beta_prime(r):
        r = np.asarray(r, dtype=float)
        t = np.clip(2.0 * r - 1.0, 0.0, 1.0)
        return -2.0 * _SMOOTHSTEP.deriv()(t)

    @staticmethod
    def beta_second(r):
        r = np.asarray(r, dtype=float)
        t = 2.0 * r - 1.0
        inside = (t > 0) & (t < 1)
        return np.where(inside, -4.0 * _SMOOTHSTEP.deriv(2)(np.clip(t, 0, 1)), 0.0)

    @property
    def slope_bound(self) -> float:
        """``max |beta'|``, so ``|grad eta| <= slope_bound / R``."""
        return 15.0 / 4.0

    @property
    def curvature_bound(self) -> float:
        """``max |beta''|`` (attained where ``P''' = 0``)."""
        t = (3.0 - math.sqrt(3.0)) / 6.0
        return 4.0 * abs(float(_SMOOTHSTEP.deriv(2)(t)))

    def eta(self, x):
        """``beta(|x| / R)``; ``x`` has shape ``(..., d)`` or is 1D scalar data."""
        x = np.asarray(x, dtype=float)
        r = np.abs(x) if x.ndim <= 1 else np.linalg.norm(x, axis=-1)
        return self.beta(r / self.R)

    def eta_prime_1d(self, x):
        x = np.asarray(x, dtype=float)
        return self.beta_prime(np.abs(x) / self.R) * np.sign(x) / self.R

    def grid_function(self, spec: GridSpec) -> GridFunction:
        return GridFunction.from_callable(spec.with_extension(Constant(0.0)),
                                          lambda P: self.eta(P) if spec.d > 1 else self.eta(P[:, 0]))

    @staticmethod
    def radial_integral(d: int) -> float:
        """``int_0^1 beta(r) r^(d-1) dr`` computed exactly on the polynomial pieces."""
        # on [1/2, 1]: beta(r) = 1 - P(2r - 1)
        r = Polynomial([-1.0, 2.0])
        piece = (1.0 - _SMOOTHSTEP(r)) * Polynomial([0.0] * (d - 1) + [1.0])
        anti = piece.integ()
        return 0.5 ** d / d + float(anti(1.0) - anti(0.5))

    def mu(self, params: KernelParams) -> float:
        """``2^(-d-2s) lam int_{B_1} beta(|y|) dy``."""
        d, s = params.d, params.s
        return 2.0 ** (-d - 2.0 * s) * params.lam * sphere_area(d) * self.radial_integral(d)


# ---------------------------------------------------------------------------
# brute-force evaluation of L_K u(x)

def _as_points(u: Callable, d: int):
    def f(P):
        P = np.asarray(P, dtype=float)
        return np.asarray(u(P[:, 0] if d == 1 else P), dtype=float).reshape(-1)
    return f


def _gauss_piece(g, a, b, atol, rtol):
    n = 16
    prev = None
    while n <= _MAX_GAUSS:
        x, w = _gauss(n)
        r = 0.5 * (b - a) * x + 0.5 * (b + a)
        cur = 0.5 * (b - a) * float(np.dot(w, g(r)))
        if prev is not None and abs(cur - prev) <= rtol * abs(cur) + atol:
            return cur
        prev = cur
        n *= 2
    raise QuadratureError(f"shell ({a}, {b}) did not converge", (prev, cur))


def brute_force_operator(u: Callable, kernel: KernelFn, x, gradient=None,
                         breakpoints: Sequence[float] = (), far_value: Optional[float] = None,
                         rtol: float = SHELL_RTOL) -> float:
    """Reference value of ``L_K u(x)`` by nested quadrature on dyadic shells.

    Shells ``2^k < |y| < 2^(k+1)`` for ``k = -20..19`` are integrated with
    Gauss-Legendre rules (doubled until the relative change is below
    ``rtol``), split at the truncation radius and at ``|p - x|`` for every
    breakpoint ``p`` of a one-dimensional ``u``.  The inner ball uses the
    second-order Taylor term and the outer region uses ``far_value``.

    Parameters
    ----------
    u : callable
        ``u(points)``; points are a 1D array when ``d = 1`` and shape
        ``(N, d)`` otherwise.
    gradient : vector, optional
        ``grad u(x)``; required for asymmetric kernels when ``s >= 1/2``.

    Raises
    ------
    QuadratureError
        With the last two estimates of the offending shell.
    """
    p = kernel.params
    d, s = p.d, p.s
    x = np.atleast_1d(np.asarray(x, dtype=float))
    U = _as_points(u, d)
    u0 = float(U(x[None, :])[0])
    sym = kernel.is_symmetric
    if not sym and s >= 0.5 and gradient is None:
        raise ConfigError("asymmetric kernels need the gradient at x when s >= 1/2")
    grad = np.zeros(d) if gradient is None else np.atleast_1d(np.asarray(gradient, float))

    def delta(Y):
        val = U(x[None, :] + Y) - u0
        if sym:
            val = 0.5 * (val + U(x[None, :] - Y) - u0)
        elif s > 0.5:
            val = val - Y @ grad
        elif s == 0.5:
            val = val - (Y @ grad) * (np.linalg.norm(Y, axis=1) < 1.0)
        return val

    eps, big = 2.0 ** SHELL_MIN_EXP, 2.0 ** SHELL_MAX_EXP
    cuts = {p.rho} if p.rho > 0 else set()
    if d == 1:
        cuts |= {abs(float(b) - x[0]) for b in breakpoints}
    total = 0.0
    for k in range(SHELL_MIN_EXP, SHELL_MAX_EXP):
        a, b = 2.0 ** k, 2.0 ** (k + 1)
        edges = [a] + sorted(c for c in cuts if a < c < b) + [b]
        mass = radial_moment(kernel, 0.0, a, b) if kernel.radial_moment else 0.0
        atol = 1e-16 * (mass + 1.0) * (abs(u0) + 1.0)
        for lo, hi in zip(edges[:-1], edges[1:]):
            if d == 1:
                def g(r):
                    Y = r[:, None]
                    return (delta(Y) * kernel(Y) + delta(-Y) * kernel(-Y))
                total += _gauss_piece(g, lo, hi, atol, rtol)
            else:
                total += _polar_piece(delta, kernel, d, lo, hi, atol, rtol)
    # inner ball: 1/2 trace(D^2 u) * int |y|^2 K / d
    step = 1e-3
    lap = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        lap += (U((x + e)[None, :])[0] + U((x - e)[None, :])[0] - 2.0 * u0) / step ** 2
    total += 0.5 * lap / d * radial_moment(kernel, 2.0, 0.0, eps)
    if far_value is None:
        e = np.zeros(d)
        e[0] = 2.0 * big
        far_value = 0.5 * float(U((x + e)[None, :])[0] + U((x - e)[None, :])[0])
    total += (far_value - u0) * radial_moment(kernel, 0.0, big, math.inf)
    return float(total)


def _polar_piece(delta, kernel, d, a, b, atol, rtol):
    n_r, n_a = 8, 32
    prev = None
    while n_r <= 512:
        pts, w = polar_nodes(d, a, b, n_r, n_a)
        cur = float(np.dot(w, delta(pts) * kernel(pts)))
        if prev is not None and abs(cur - prev) <= rtol * abs(cur) + atol:
            return cur
        prev = cur
        n_r, n_a = 2 * n_r, 2 * n_a
    raise QuadratureError(f"polar shell ({a}, {b}) did not converge", (prev, cur))


# ---------------------------------------------------------------------------
# half-Laplacian on the line

def half_laplacian_example(x: float, eta: Optional[BumpProfile] = None) -> float:
    """Closed-form value at ``x`` of ``-L u`` for ``u(y) = y|y| eta(y) / 2``,
    ``d = 1``, ``s = 1/2`` and unit kernel ``|y|^(-2)``.

    The default cut-off is ``BumpProfile(R=2)`` (equal to 1 on ``[-1, 1]``).
    Returns ``2x log|x| - x log(1 - x^2)`` plus the tail integral
    ``int_{|y|>1} (|y| eta + y|y| eta' / 2) / (x - y) dy``; at ``x = 0`` the
    convention ``0 log 0 = 0`` applies.
    """
    eta = eta or BumpProfile(2.0)
    x = float(x)
    if abs(x) >= 1.0:
        raise ConfigError("the example is defined for |x| < 1")
    if eta.R < 2.0:
        raise ConfigError("the cut-off must equal 1 on [-1, 1]")
    head = (2.0 * x * math.log(abs(x)) if x != 0.0 else 0.0) - x * math.log1p(-x * x)

    def g(y):
        e = float(eta.eta(np.array(y)))
        de = float(eta.eta_prime_1d(np.array(y)))
        return (abs(y) * e + 0.5 * y * abs(y) * de) / (x - y)

    knots = [1.0, 0.5 * eta.R, eta.R]
    tail = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi > lo:
            tail += quad(g, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
            tail += quad(g, -hi, -lo, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return head + tail


def half_laplacian_profile(eta: Optional[BumpProfile] = None):
    """The test function ``u(y) = y|y| eta(y) / 2`` as a vectorized callable."""
    eta = eta or BumpProfile(2.0)
    return lambda y: 0.5 * np.asarray(y) * np.abs(y) * eta.eta(np.asarray(y))


# ---------------------------------------------------------------------------
# dyadic moment bounds

@dataclass
class LemmaA1Report:
    """Scaled moments per sampled radius with their dyadic bounds.

    ``parts[name] = {"ratios": [...], "bound": value, "ok": flag}``; part
    ``"e"`` also lists the raw second moments and part ``"f"`` the largest
    change caused by moving the compensator radius.
    """

    radii: list
    parts: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(p["ok"] for p in self.parts.values())


def _hide_closed_forms(kernel: KernelFn) -> KernelFn:
    return make_user_kernel(kernel.eval, kernel.params, kernel.is_symmetric,
                            kernel.is_integrable, label=kernel.label + "+quadrature")


def _vector_moment(kernel, a, b):
    """``|int_{a<|y|<b} y K(y) dy|`` by quadrature."""
    from .kernels import ball_integral, exterior_integral, shell_integral
    w = lambda y: y
    if a == 0.0:
        v = ball_integral(kernel, b, w)
    elif math.isinf(b):
        v = exterior_integral(kernel, a, w)
    else:
        v = shell_integral(kernel, a, b, w)
    return float(np.linalg.norm(np.atleast_1d(v)))


def lemma_a1_check(kernel: KernelFn, radii: Sequence[float], alpha_mid: Optional[float] = None,
                   use_closed_form: bool = True, grid_n: int = 257) -> LemmaA1Report:
    """Evaluate the dyadic moment bounds of an admissible kernel.

    Parts (ratios are divided by ``Lambda`` and scaled to be dimensionless):

    * ``a``: ``R^{2s} int_{|y|>R} K``, bound ``1 / (1 - 2^{-2s})``;
    * ``b``: ``R^{2s-alpha} int_{B_R} |y|^alpha K`` for ``alpha = 2`` and
      ``alpha_mid`` in ``(2s, 2)``, bound ``2^{2s} / (1 - 2^{-(alpha-2s)})``;
    * ``c`` (``s < 1/2``): ``R^{2s-1} int_{B_R} |y| K``, bound
      ``2^{2s} / (1 - 2^{-(1-2s)})``;
    * ``d`` (``s > 1/2``): ``R^{2s-1} int_{|y|>R} |y| K``, bound
      ``2 / (1 - 2^{1-2s})``;
    * ``e``: the second-moment ratio (``b`` with ``alpha = 2``);
    * ``f`` (symmetric, ``s = 1/2``): largest change of the discrete ``L_K u``
      for a Gaussian ``u`` when the compensator radius moves from 1 to ``R``;
      must stay below ``1e-9``.
    """
    p = kernel.params
    s, Lam = p.s, p.Lam
    radii = [float(r) for r in radii]
    if not radii or min(radii) <= 0:
        raise ConfigError("radii must be positive")
    k = kernel if use_closed_form else _hide_closed_forms(kernel)
    alpha_mid = 1.0 + s if alpha_mid is None else float(alpha_mid)
    if not 2 * s < alpha_mid < 2:
        raise ConfigError("alpha_mid must lie in (2s, 2)")
    rep = LemmaA1Report(radii)

    def part(name, ratios, bound, **extra):
        ratios = [float(v) for v in ratios]
        rep.parts[name] = dict(ratios=ratios, bound=bound,
                               ok=all(v <= bound * (1 + 1e-9) for v in ratios), **extra)

    part("a", [radial_moment(k, 0.0, R, math.inf) * R ** (2 * s) / Lam for R in radii],
         1.0 / (1.0 - 2.0 ** (-2 * s)))
    for tag, alpha in (("b2", 2.0), ("b", alpha_mid)):
        part(tag, [radial_moment(k, alpha, 0.0, R) * R ** (2 * s - alpha) / Lam for R in radii],
             2.0 ** (2 * s) / (1.0 - 2.0 ** (-(alpha - 2 * s))), alpha=alpha)
    if s < 0.5:
        part("c", [radial_moment(k, 1.0, 0.0, R) * R ** (2 * s - 1) / Lam for R in radii],
             2.0 ** (2 * s) / (1.0 - 2.0 ** (-(1 - 2 * s))))
    if s > 0.5:
        part("d", [radial_moment(k, 1.0, R, math.inf) * R ** (2 * s - 1) / Lam for R in radii],
             2.0 / (1.0 - 2.0 ** (1 - 2 * s)))
    second = [radial_moment(k, 2.0, 0.0, R) for R in radii]
    part("e", [m * R ** (2 * s - 2) / Lam for m, R in zip(second, radii)],
         2.0 ** (2 * s) / (1.0 - 2.0 ** (-(2 - 2 * s))), moments=second)
    if s == 0.5 and kernel.is_symmetric:
        spec = GridSpec(p.d, 4.0, grid_n if p.d == 1 else min(grid_n, 48))
        u = GridFunction.from_callable(spec, lambda P: np.exp(-np.sum(P ** 2, axis=1)))
        ref = apply_linear(u, OperatorConfig(p, "linear", kernel), symmetrize=False).values
        diffs = []
        for R in radii:
            cfg = OperatorConfig(p, "linear", kernel, compensator_radius=R)
            diffs.append(float(np.max(np.abs(apply_linear(u, cfg, symmetrize=False).values - ref))))
        rep.parts["f"] = dict(ratios=diffs, bound=1e-9, ok=all(v < 1e-9 for v in diffs))
    return rep


# ---------------------------------------------------------------------------
# extremal operators applied to bumps

@dataclass
class BumpBoundReport:
    """Scaled extremal values of ``eta_R`` for each radius."""

    radii: list
    sup_plus: list            # R^{2s} max |M+ eta_R|
    sup_minus: list           # R^{2s} max |M- eta_R|
    boundary_min: list        # R^{2s} min of M- eta_R at nodes nearest |x| = R
    mu: float
    spread_plus: float        # max / min of sup_plus
    spread_minus: float
    boundary_ok: bool

    def to_record(self) -> dict:
        return {"spread_plus": self.spread_plus, "spread_minus": self.spread_minus,
                "mu": self.mu, "boundary_ok": self.boundary_ok}


def _bump_grid(profile_R, d, nodes_per_radius):
    h = profile_R / nodes_per_radius
    L = 2.0 * profile_R
    return GridSpec(d, L, int(round(2 * L / h)) + 1, Constant(0.0))


def bump_bound_check(profile: BumpProfile, params: KernelParams, R_list: Sequence[float],
                     nodes_per_radius: int = 256) -> BumpBoundReport:
    """Scaled sup norms of ``M+- eta_R`` and the boundary minimum of
    ``M- eta_R`` over radii ``R`` (``eta_R(x) = beta(|x|/R)``).

    The grid covers ``[-2R, 2R]^d`` with spacing ``R / nodes_per_radius`` so the
    discrete problems are exact rescalings of each other when ``rho = 0``.
    """
    del profile  # only the shape of beta matters; radii come from R_list
    if 2 * nodes_per_radius + 1 < 16:
        raise ConfigError("fewer than 16 nodes across B_R")
    s, d = params.s, params.d
    sp, sm, bmin = [], [], []
    for R in R_list:
        if R <= params.rho:
            raise ConfigError("bump radii must exceed rho")
        spec = _bump_grid(R, d, nodes_per_radius)
        eta = BumpProfile(R).grid_function(spec)
        plus = apply_pucci(eta, OperatorConfig(params, "pucci_plus")).values
        minus = apply_pucci(eta, OperatorConfig(params, "pucci_minus")).values
        sp.append(float(np.max(np.abs(plus))) * R ** (2 * s))
        sm.append(float(np.max(np.abs(minus))) * R ** (2 * s))
        r = np.linalg.norm(spec.points(), axis=1).reshape(spec.shape)
        ring = np.abs(r - R) <= 0.5 * spec.h * math.sqrt(d) + 1e-12 * R
        bmin.append(float(np.min(minus[ring])) * R ** (2 * s))
    mu = BumpProfile().mu(params)
    return BumpBoundReport(list(R_list), sp, sm, bmin, mu, max(sp) / min(sp), max(sm) / min(sm),
                           all(v >= mu * (1 - 1e-6) for v in bmin))


def holder_gamma(s: float) -> float:
    """Exponent used for the extremal-operator Hölder quotient."""
    if s < 0.5:
        return 1.0 - 2.0 * s
    if s > 0.5:
        return 2.0 - 2.0 * s
    return 0.5


def pucci_holder_quotient(phi: GridFunction, params: KernelParams, R: float = 1.0,
                          block: int = 1 << 22):
    """``(gamma, C)`` with ``C = max |M phi(x) - M phi(y)| R^{2s} (R/|x-y|)^gamma``
    over node pairs and both extremal operators."""
    gamma = holder_gamma(params.s)
    if not np.any(phi.values):
        log.warning("zero profile: Hölder quotient is degenerate")
        return gamma, 0.0
    pts = phi.spec.points()
    best = 0.0
    for kind in ("pucci_plus", "pucci_minus"):
        v = apply_pucci(phi, OperatorConfig(params, kind)).values.ravel()
        N = v.size
        step = max(1, block // N)
        for a in range(0, N, step):
            i = np.arange(a, min(N, a + step))
            dist = np.linalg.norm(pts[i][:, None, :] - pts[None, :, :], axis=-1)
            diff = np.abs(v[i][:, None] - v[None, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(dist > 0, diff * (R / dist) ** gamma, 0.0)
            best = max(best, float(np.max(q)))
    return gamma, best * R ** (2 * params.s)
