import math

import numpy as np
import pytest
from scipy.integrate import quad

from trunckern import (ConfigError, GridFunction, GridSpec, KernelParams, OperatorConfig,
                       apply_linear, make_truncated_fractional_kernel)
from trunckern.oracles import (BumpProfile, brute_force_operator, bump_bound_check,
                               half_laplacian_example, half_laplacian_profile, holder_gamma,
                               lemma_a1_check, pucci_holder_quotient)


def _unit_kernel(s, rho=0.0, d=1, Lam=1.0):
    return make_truncated_fractional_kernel(KernelParams(d, s, 1.0, Lam, rho), 1.0)


def test_bump_profile_shape():
    b = BumpProfile(2.0)
    x = np.linspace(-3, 3, 6001)
    e = b.eta(x)
    assert np.all(e[np.abs(x) <= 1.0] == 1.0) and np.all(e[np.abs(x) >= 2.0] == 0.0)
    assert np.all(np.diff(e[x >= 0]) <= 0)
    r = np.linspace(0, 1.2, 120001)
    assert np.min(BumpProfile.beta_prime(r)) == pytest.approx(-b.slope_bound, rel=1e-8)
    assert np.max(np.abs(BumpProfile.beta_second(r))) <= b.curvature_bound * (1 + 1e-12)
    # derivative formulas agree with finite differences
    h = 1e-6
    t = np.linspace(0.55, 0.95, 9)
    fd = (BumpProfile.beta(t + h) - BumpProfile.beta(t - h)) / (2 * h)
    assert np.allclose(fd, BumpProfile.beta_prime(t), atol=1e-7)


def test_bump_mu_against_quadrature():
    p = KernelParams(1, 0.5, 1.0, 1.0, 0.0)
    ref = 2.0 ** (-2.0) * 2.0 * quad(lambda r: BumpProfile.beta(np.array(r)), 0, 1)[0]
    assert BumpProfile().mu(p) == pytest.approx(ref, rel=1e-10)
    assert BumpProfile().mu(p) == pytest.approx(0.375, rel=1e-12)


@pytest.mark.parametrize("x", (-0.5, -0.25, -0.1, 0.1, 0.25, 0.5))
def test_brute_force_matches_half_laplacian_closed_form(x):
    u = half_laplacian_profile()
    bf = brute_force_operator(u, _unit_kernel(0.5), x, breakpoints=(0.0, -2.0, -1.0, 1.0, 2.0))
    assert bf == pytest.approx(-half_laplacian_example(x), abs=1e-8)


def test_half_laplacian_example_is_odd_and_validated():
    assert half_laplacian_example(0.0) == pytest.approx(0.0, abs=1e-12)
    assert half_laplacian_example(0.3) == pytest.approx(-half_laplacian_example(-0.3), rel=1e-12)
    with pytest.raises(ConfigError):
        half_laplacian_example(1.5)
    with pytest.raises(ConfigError):
        half_laplacian_example(0.2, BumpProfile(1.0))


def test_brute_force_gaussian_fourier_value():
    # K = |y|^{-2} in d = 1 gives L = -pi (-Delta)^{1/2}; at 0 this is -2 sqrt(pi) for exp(-x^2)
    v = brute_force_operator(lambda x: np.exp(-x ** 2), _unit_kernel(0.5), 0.0, far_value=0.0)
    assert v == pytest.approx(-2.0 * math.sqrt(math.pi), rel=1e-9)


def test_brute_force_annihilates_constants_and_uses_far_value():
    K = _unit_kernel(0.25, rho=0.5)
    assert brute_force_operator(lambda x: 0 * x + 5.0, K, 0.3) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("s", (0.25, 0.5, 0.75))
def test_grid_operator_agrees_with_brute_force(s):
    K = _unit_kernel(s, rho=0.25)
    spec = GridSpec(1, 8.0, 4097)
    f = lambda x: np.exp(-x ** 2)
    Lu = apply_linear(GridFunction.from_callable(spec, lambda P: f(P[:, 0])),
                      OperatorConfig(K.params, "linear", K))
    for x0 in (0.0, 0.5, 1.0):
        i = spec.nearest_index(x0)
        ref = brute_force_operator(f, K, spec.axis()[i[0]], far_value=0.0)
        assert Lu.values[i] == pytest.approx(ref, abs=1e-4)


@pytest.mark.parametrize("s", (0.25, 0.5, 0.75))
def test_tail_ratio_is_one_over_s(s):
    rep = lemma_a1_check(_unit_kernel(s), [0.1, 1.0, 10.0])
    assert rep.parts["a"]["ratios"] == pytest.approx([1.0 / s] * 3, abs=1e-10)
    for name in ("b", "b2", "e"):
        assert rep.parts[name]["ok"]
    assert ("c" in rep.parts) == (s < 0.5) and ("d" in rep.parts) == (s > 0.5)


@pytest.mark.parametrize("s", (0.25, 0.5, 0.75))
def test_second_moment_ratio_via_quadrature(s):
    radii = [0.1, 1.0, 10.0]
    rep = lemma_a1_check(_unit_kernel(s), radii, use_closed_form=False)
    for m, R in zip(rep.parts["e"]["moments"], radii):
        assert m == pytest.approx(2 * R ** (2 - 2 * s) / (2 - 2 * s), rel=1e-8)


def test_compensator_radius_is_irrelevant_for_symmetric_kernels():
    rep = lemma_a1_check(_unit_kernel(0.5), [0.5, 2.0])
    assert rep.parts["f"]["ok"]


def test_kernel_bound_check_rejects_bad_alpha():
    with pytest.raises(ConfigError):
        lemma_a1_check(_unit_kernel(0.75), [1.0], alpha_mid=1.0)


@pytest.mark.parametrize("s", (0.25, 0.5, 0.75))
def test_bump_bounds_scale(s):
    rep = bump_bound_check(BumpProfile(), KernelParams(1, s, 1.0, 2.0, 0.0), [1, 2, 4],
                           nodes_per_radius=64)
    assert rep.spread_plus <= 1.25 and rep.spread_minus <= 1.25
    assert rep.boundary_ok


def test_holder_gamma_regimes():
    assert holder_gamma(0.25) == pytest.approx(0.5)
    assert holder_gamma(0.1) == pytest.approx(0.8)
    assert holder_gamma(0.5) == 0.5
    assert holder_gamma(0.9) == pytest.approx(0.2)


@pytest.mark.parametrize("s", (0.25, 0.75))
def test_holder_quotient_is_scale_stable(s):
    p = KernelParams(1, s, 1.0, 2.0, 0.0)
    qs = [pucci_holder_quotient(BumpProfile(R).grid_function(GridSpec(1, 2 * R, 257)), p, R)[1]
          for R in (1.0, 2.0, 4.0)]
    assert max(qs) / min(qs) <= 1.5
