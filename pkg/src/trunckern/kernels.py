"""Admissible jump kernels, their validation and their integrals.

The built-in family is the capped fractional kernel

    K_rho(y) = scale * min(|y|^(-d-2s), rho^(-d-2s)),

with ``rho = 0`` meaning no cap.  User kernels are arbitrary nonnegative
callables; every integral of a user kernel falls back to polar quadrature.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, QuadratureError

log = logging.getLogger(__name__)

#: relative tolerance for the doubling polar quadrature
QUAD_RTOL = 1e-8
_MAX_LEVELS = 10
_MAX_NODES = 2_000_000


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_volume(d: int) -> float:
    return sphere_area(d) / d


@dataclass(frozen=True)
class KernelParams:
    """Ellipticity data ``(d, s, lam, Lam, rho)`` of the kernel class.

    ``lam`` and ``Lam`` are the lower and upper ellipticity constants; ``rho``
    is the truncation length, where 0 flags the untruncated kernel.
    """

    d: int
    s: float
    lam: float
    Lam: float
    rho: float = 0.0

    def __post_init__(self):
        for name in ("s", "lam", "Lam", "rho"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"kernel parameter {name} must be finite")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError("dimension d must be an integer >= 1")
        if not 0.0 < self.s < 1.0:
            raise ConfigError("order s must lie in (0, 1)")
        if self.lam <= 0 or self.Lam <= 0:
            raise ConfigError("ellipticity constants must be positive")
        if self.rho < 0:
            raise ConfigError("truncation rho must be >= 0")

    @property
    def exponent(self) -> float:
        """The decay exponent d + 2s."""
        return self.d + 2.0 * self.s

    def with_rho(self, rho: float) -> "KernelParams":
        return KernelParams(self.d, self.s, self.lam, self.Lam, rho)


@dataclass(frozen=True, eq=False)
class KernelFn:
    """A kernel ``y -> K(y)`` together with the metadata the solvers need.

    Parameters
    ----------
    eval : callable
        Maps an array of points with shape ``(..., d)`` to values ``(...)``.
    params : KernelParams
    is_symmetric, is_integrable : bool
    closed_form_annulus_mass : callable, optional
        ``r -> int_{r<|y|<2r} K``.
    radial_moment : callable, optional
        ``(k, a, b) -> int_{a<|y|<b} |y|^k K(y) dy`` in closed form.
    radial : callable, optional
        Profile ``r -> K`` for isotropic kernels.
    scale : float, optional
        Multiplier of the built-in family.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    params: KernelParams
    is_symmetric: bool
    is_integrable: bool
    closed_form_annulus_mass: Optional[Callable[[float], float]] = None
    radial_moment: Optional[Callable[[float, float, float], float]] = None
    radial: Optional[Callable[[np.ndarray], np.ndarray]] = None
    scale: Optional[float] = None
    label: str = field(default="user")

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.params.d == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        return np.asarray(self.eval(y), dtype=float)


def _capped_power(params: KernelParams, scale: float, r):
    p = -params.exponent
    with np.errstate(divide="ignore", over="ignore"):
        v = np.power(r, p)
        if params.rho > 0:
            v = np.minimum(v, params.rho ** p)
    return scale * v


def _power_integral(p: float, a: float, b: float) -> float:
    """int_a^b r^p dr, allowing ``b = inf`` (p < -1) and ``a = 0`` (p > -1)."""
    if b <= a:
        return 0.0
    if p == -1.0:
        return math.log(b / a)
    if math.isinf(b):
        if p >= -1.0:
            return math.inf
        return -(a ** (p + 1.0)) / (p + 1.0)
    if a == 0.0 and p <= -1.0:
        return math.inf
    return (b ** (p + 1.0) - a ** (p + 1.0)) / (p + 1.0)


def truncated_radial_moment(params: KernelParams, scale: float, k: float,
                            a: float, b: float) -> float:
    """Closed form of ``int_{a<|y|<b} |y|^k K_rho(y) dy`` for the built-in family."""
    d, s, rho = params.d, params.s, params.rho
    total = 0.0
    lo = a
    if rho > 0 and a < rho:
        hi = min(b, rho)
        # rho^(-d-2s) (hi^(k+d) - a^(k+d)) / (k+d), combined in logs so that
        # tiny rho does not overflow the cap
        q, e = k + d, params.exponent
        core = math.exp(q * math.log(hi) - e * math.log(rho))
        if a > 0:
            core -= math.exp(q * math.log(a) - e * math.log(rho))
        total += core / q
        lo = rho
    if b > lo:
        total += _power_integral(k - 1.0 - 2.0 * s, lo, b)
    return scale * sphere_area(d) * total


def make_truncated_fractional_kernel(params: KernelParams, scale: float) -> KernelFn:
    """Build ``K(y) = scale * min(|y|^(-d-2s), rho^(-d-2s))``.

    Raises
    ------
    ConfigError
        If ``scale`` is not finite or below ``params.lam`` (the pointwise
        lower bound would fail).
    """
    if not math.isfinite(scale) or scale <= 0:
        raise ConfigError("kernel scale must be a positive finite number")
    if scale < params.lam:
        raise ConfigError(f"kernel scale {scale} is below the lower ellipticity constant {params.lam}")

    def radial(r):
        return _capped_power(params, scale, np.asarray(r, dtype=float))

    def evaluate(y):
        return radial(np.linalg.norm(y, axis=-1))

    def moment(k, a, b):
        return truncated_radial_moment(params, scale, k, a, b)

    def annulus(r):
        return moment(0.0, r, 2.0 * r)

    return KernelFn(evaluate, params, True, params.rho > 0, annulus, moment, radial,
                    float(scale), label="truncated_fractional")


def lower_kernel(params: KernelParams) -> KernelFn:
    """The lower-bound kernel ``lam * min(|y|^(-d-2s), rho^(-d-2s))``."""
    return make_truncated_fractional_kernel(params, params.lam)


def make_user_kernel(eval: Callable, params: KernelParams, symmetric: bool,
                     integrable: bool | None = None, label: str = "user") -> KernelFn:
    """Wrap an arbitrary nonnegative kernel; no validation is performed here."""
    if integrable is None:
        integrable = params.rho > 0
    return KernelFn(eval, params, bool(symmetric), bool(integrable), label=label)


# ---------------------------------------------------------------------------
# polar quadrature

@lru_cache(maxsize=64)
def _gauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def polar_nodes(d: int, a: float, b: float, n_r: int, n_a: int):
    """Product nodes on the shell ``a < |y| < b``.

    Gauss-Legendre in the radius, midpoint in angles (Gauss-Legendre in the
    polar cosine for d = 3).  Returns ``(points (N, d), weights (N,))``.
    """
    x, w = _gauss(n_r)
    r = 0.5 * (b - a) * x + 0.5 * (b + a)
    wr = 0.5 * (b - a) * w * r ** (d - 1)
    if d == 1:
        pts = np.concatenate([r, -r])[:, None]
        wts = np.concatenate([wr, wr])
        return pts, wts
    if d == 2:
        th = 2.0 * np.pi * (np.arange(n_a) + 0.5) / n_a
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        wa = np.full(n_a, 2.0 * np.pi / n_a)
    elif d == 3:
        m = max(n_a // 2, 2)
        c, wc = _gauss(m)
        ph = 2.0 * np.pi * (np.arange(n_a) + 0.5) / n_a
        sn = np.sqrt(1.0 - c ** 2)
        dirs = np.stack([np.outer(sn, np.cos(ph)).ravel(),
                         np.outer(sn, np.sin(ph)).ravel(),
                         np.repeat(c, n_a)], axis=1)
        wa = np.repeat(wc, n_a) * (2.0 * np.pi / n_a)
    else:
        raise ConfigError("polar quadrature is available for d <= 3 only")
    pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    wts = np.outer(wr, wa).ravel()
    return pts, wts


def _shell_once(kernel, weight, a, b, n_r, n_a, breaks):
    """Quadrature estimate of the shell integral and of its absolute value."""
    total = mag = 0.0
    edges = [a] + [p for p in breaks if a < p < b] + [b]
    for lo, hi in zip(edges[:-1], edges[1:]):
        pts, wts = polar_nodes(kernel.params.d, lo, hi, n_r, n_a)
        vals = kernel(pts)
        if weight is not None:
            g = np.asarray(weight(pts), dtype=float)
            vals = vals[:, None] * g if g.ndim == 2 else vals * g
        total = total + np.tensordot(wts, vals, axes=(0, 0))
        mag = mag + np.tensordot(wts, np.abs(vals), axes=(0, 0))
    return total, mag


def shell_integral(kernel: KernelFn, a: float, b: float, weight=None,
                   rtol: float = QUAD_RTOL) -> np.ndarray | float:
    """``int_{a<|y|<b} weight(y) K(y) dy`` by doubling polar quadrature.

    Node counts are doubled until the relative change drops below ``rtol``.

    Raises
    ------
    QuadratureError
        When the change is still above tolerance after the last refinement;
        the error carries the last two estimates.
    """
    d = kernel.params.d
    breaks = [kernel.params.rho] if kernel.params.rho > 0 else []
    n_r, n_a = 8, 16
    prev, _ = _shell_once(kernel, weight, a, b, n_r, n_a, breaks)
    for _ in range(_MAX_LEVELS):
        n_r *= 2
        if d > 1:
            n_a *= 2
        cur, mag = _shell_once(kernel, weight, a, b, n_r, n_a, breaks)
        diff = np.max(np.abs(np.asarray(cur - prev)))
        # cancelling components (odd moments of symmetric kernels) are
        # measured against the integral of the absolute integrand
        size = np.max(np.abs(np.asarray(mag)))
        if not np.all(np.isfinite(cur)):
            raise QuadratureError("non-finite kernel values in shell quadrature",
                                  (float(np.max(prev)), float(np.max(cur))))
        if diff <= rtol * size or size == 0.0:
            return cur
        prev = cur
        if n_r * (n_a if d > 1 else 2) ** (d - 1) > _MAX_NODES:
            break
    raise QuadratureError(f"shell quadrature on ({a}, {b}) did not converge",
                          (float(np.max(prev)), float(np.max(cur))))


def _dyadic_sum(kernel, weight, radii_iter, rtol, max_shells=4000):
    total = 0.0
    small = 0
    last = None
    for k, (lo, hi) in enumerate(radii_iter):
        piece = shell_integral(kernel, lo, hi, weight, rtol=min(rtol, QUAD_RTOL))
        total = total + piece
        mag = float(np.max(np.abs(np.asarray(piece))))
        ref = float(np.max(np.abs(np.asarray(total))))
        decaying = last is None or mag <= last
        last = mag
        if (mag <= 1e-3 * rtol * ref or ref == 0.0 and k > 60) and decaying:
            small += 1
            if small >= 3:
                return total
        else:
            small = 0
        if k >= max_shells:
            break
    raise QuadratureError("dyadic shell sum did not converge", (ref, mag))


def ball_integral(kernel: KernelFn, b: float, weight=None, rtol: float = 1e-10):
    """``int_{|y|<b} weight K`` summed over dyadic shells toward the origin."""
    def shells():
        hi = b
        while True:
            yield hi / 2.0, hi
            hi /= 2.0
    return _dyadic_sum(kernel, weight, shells(), rtol)


def exterior_integral(kernel: KernelFn, a: float, weight=None, rtol: float = 1e-10):
    """``int_{|y|>a} weight K`` summed over dyadic shells toward infinity."""
    def shells():
        lo = a
        while True:
            yield lo, 2.0 * lo
            lo *= 2.0
    return _dyadic_sum(kernel, weight, shells(), rtol)


def radial_moment(kernel: KernelFn, k: float, a: float, b: float) -> float:
    """``int_{a<|y|<b} |y|^k K(y) dy`` (closed form when known, else quadrature)."""
    if kernel.radial_moment is not None:
        return kernel.radial_moment(k, a, b)
    weight = None if k == 0 else (lambda y: np.linalg.norm(y, axis=-1) ** k)
    if a == 0.0 and math.isinf(b):
        return float(ball_integral(kernel, 1.0, weight) + exterior_integral(kernel, 1.0, weight))
    if a == 0.0:
        return float(ball_integral(kernel, b, weight))
    if math.isinf(b):
        return float(exterior_integral(kernel, a, weight))
    return float(shell_integral(kernel, a, b, weight))


def annulus_mass(kernel: KernelFn, r: float) -> float:
    """Mass of ``kernel`` on the annulus ``r < |y| < 2r``."""
    if r <= 0:
        raise ConfigError("annulus radius must be positive")
    if kernel.closed_form_annulus_mass is not None:
        return float(kernel.closed_form_annulus_mass(r))
    return float(shell_integral(kernel, r, 2.0 * r))


def kernel_l1_norm(kernel: KernelFn) -> float:
    """Total mass of the kernel; ``math.inf`` when it is not integrable."""
    if not kernel.is_integrable:
        return math.inf
    return radial_moment(kernel, 0.0, 0.0, math.inf)


# ---------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    """Outcome of :func:`validate_ellipticity`.

    The ratios are: worst ``K / K_low`` over the sampled nodes, the largest
    annulus mass divided by ``Lam r^(-2s)``, and (for s = 1/2) the largest
    normalized first moment on annuli.
    """

    lower_bound_ok: bool
    lower_bound_ratio: float
    annulus_bound_ok: bool
    annulus_ratio: float
    symmetry_ok: Optional[bool]
    symmetry_ratio: Optional[float]
    sampled_radii: list
    class_nonempty_ok: bool = True
    class_nonempty_ratio: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.lower_bound_ok and self.annulus_bound_ok and self.symmetry_ok is not False


def geometric_radii(r_min: float, r_max: float) -> list:
    """Radii ``2^k r_min`` for ``k = 0, 1, ...`` not exceeding ``r_max``."""
    out = [r_min]
    while out[-1] * 2.0 <= r_max * (1 + 1e-12):
        out.append(out[-1] * 2.0)
    return out


def validate_ellipticity(kernel: KernelFn, radii: Sequence[float],
                         quadrature_nodes_per_annulus: int = 16) -> ValidationReport:
    """Check the pointwise lower bound, the annulus upper bound and, for
    ``s = 1/2``, the vanishing of first moments on annuli at the sampled radii."""
    radii = [float(r) for r in radii]
    if not radii or min(radii) <= 0:
        raise ConfigError("radii must be a nonempty list of positive numbers")
    p = kernel.params
    low = lower_kernel(p)
    failures = []
    worst_low = math.inf
    worst_ann = 0.0
    worst_sym = 0.0 if p.s == 0.5 else None
    worst_nonempty = 0.0
    n = int(quadrature_nodes_per_annulus)
    for r in radii:
        pts, _ = polar_nodes(p.d, r, 2.0 * r, n, 2 * n)
        vals = kernel(pts)
        bad = ~np.isfinite(vals)
        if bad.any():
            node = pts[np.argmax(bad)]
            failures.append(f"non-finite kernel value at node {node.tolist()}")
            worst_low = 0.0
            continue
        ratio = vals / low(pts)
        worst_low = min(worst_low, float(ratio.min()))
        cap = p.Lam * r ** (-2.0 * p.s)
        try:
            worst_ann = max(worst_ann, annulus_mass(kernel, r) / cap)
            if worst_sym is not None and not kernel.is_symmetric:
                m1 = shell_integral(kernel, r, 2.0 * r, lambda y: y)
                worst_sym = max(worst_sym, float(np.linalg.norm(m1)) / (r * cap))
        except QuadratureError as exc:
            failures.append(f"quadrature failed at r={r}: {exc}")
            worst_ann = math.inf
        worst_nonempty = max(worst_nonempty, annulus_mass(low, r) / cap)
    lower_ok = worst_low >= 1.0 and not failures
    ann_ok = worst_ann <= 1.0 + 1e-12 and not failures
    sym_ok = None if worst_sym is None else worst_sym <= 1e-8
    if worst_nonempty > 1.0 + 1e-12:
        log.warning("lower-bound kernel exceeds the annulus cap (ratio %.4g): "
                    "the kernel class is empty for these constants", worst_nonempty)
    return ValidationReport(
        lower_bound_ok=lower_ok,
        lower_bound_ratio=max(0.0, worst_low) if math.isfinite(worst_low) else 0.0,
        annulus_bound_ok=ann_ok,
        annulus_ratio=worst_ann if math.isfinite(worst_ann) else float("nan"),
        symmetry_ok=sym_ok,
        symmetry_ratio=worst_sym,
        sampled_radii=radii,
        class_nonempty_ok=worst_nonempty <= 1.0 + 1e-12,
        class_nonempty_ratio=worst_nonempty,
        failures=failures,
    )
