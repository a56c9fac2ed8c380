import numpy as np
import pytest

from conftest import capped_wavy_kernel, random_function, smooth_function, wavy_kernel
from trunckern import (ConfigError, Constant, GridFunction, GridSpec, IsaacMember, KernelParams,
                       OperatorConfig, Periodic, apply_difference, apply_isaac, apply_linear,
                       apply_operator, apply_pucci, cap_violation, make_truncated_fractional_kernel,
                       make_user_kernel)
from trunckern.operators import linear_stencil, pucci_data

S_VALUES = (0.25, 0.5, 0.75)


def _pucci(params, sign):
    return OperatorConfig(params, "pucci_plus" if sign > 0 else "pucci_minus")


@pytest.mark.parametrize("s", S_VALUES)
@pytest.mark.parametrize("d", (1, 2))
def test_constants_are_annihilated_exactly(s, d):
    spec = GridSpec(d, 1.0, 33 if d == 1 else 17, Constant(2.5))
    u = GridFunction(spec, np.full(spec.shape, 2.5))
    p = KernelParams(d, s, 1.0, 2.0, 0.0)
    K = make_truncated_fractional_kernel(p, 1.0)
    assert np.all(apply_linear(u, OperatorConfig(p, "linear", K)).values == 0.0)
    for sign in (1, -1):
        for grad in ("centered", "upwind"):
            assert np.all(apply_pucci(u, _pucci(p, sign), gradient=grad).values == 0.0)


@pytest.mark.parametrize("s", S_VALUES)
@pytest.mark.parametrize("grad", ("centered", "upwind"))
def test_extremal_antisymmetry_is_bitwise(s, grad, rng):
    spec = GridSpec(1, 1.0, 129)
    u = random_function(spec, rng, ext=0.3)
    p = KernelParams(1, s, 1.0, 2.0, 0.0)
    plus = apply_pucci(-u, _pucci(p, 1), gradient=grad).values
    minus = apply_pucci(u, _pucci(p, -1), gradient=grad).values
    assert np.array_equal(plus, -minus)


@pytest.mark.parametrize("s", S_VALUES)
@pytest.mark.parametrize("rho", (0.0, 0.1))
def test_cap_respecting_kernels_are_sandwiched(s, rho, rng):
    spec = GridSpec(1, 1.0, 129)
    p = KernelParams(1, s, 1.0, 4.0, rho)
    lo = apply_pucci(smooth_function(spec), _pucci(p, -1))
    hi = apply_pucci(smooth_function(spec), _pucci(p, 1))
    for _ in range(4):
        K = capped_wavy_kernel(spec, p, rng)
        for u in (smooth_function(spec, 0.2), random_function(spec, rng)):
            L = apply_linear(u, OperatorConfig(p, "linear", K)).values
            assert np.all(apply_pucci(u, _pucci(p, -1)).values <= L + 1e-10)
            assert np.all(L <= apply_pucci(u, _pucci(p, 1)).values + 1e-10)
    assert np.all(lo.values <= hi.values)


@pytest.mark.parametrize("s", S_VALUES)
def test_lower_kernel_sits_on_the_caps(s):
    spec = GridSpec(1, 1.0, 129)
    p = KernelParams(1, s, 1.0, 2.0, 0.0)
    assert cap_violation(spec, make_truncated_fractional_kernel(p, 1.0)) <= 1e-12


def test_cap_breach_is_detected():
    # at rho = 0 and Lambda = 2 the first lattice bin has no discrete slack
    spec = GridSpec(1, 1.0, 129)
    p = KernelParams(1, 0.5, 1.0, 2.0, 0.0)
    assert cap_violation(spec, wavy_kernel(p, 0.3, 2.0, 1.0)) > 0.0
    assert cap_violation(spec, make_truncated_fractional_kernel(p, 1.0)) <= 1e-12


@pytest.mark.parametrize("s", S_VALUES)
def test_extremal_sub_and_superadditivity(s, rng):
    spec = GridSpec(1, 1.0, 129)
    p = KernelParams(1, s, 1.0, 4.0, 0.0)
    K = capped_wavy_kernel(spec, p, rng)
    for _ in range(5):
        u, v = random_function(spec, rng, 0.1), random_function(spec, rng, -0.4)
        P = lambda w, sg: apply_pucci(w, _pucci(p, sg)).values
        assert np.all(P(u + v, 1) <= P(u, 1) + P(v, 1) + 1e-10)
        assert np.all(P(u + v, -1) >= P(u, -1) + P(v, -1) - 1e-10)
        cfg = OperatorConfig(p, "linear", K)
        diff = apply_linear(u, cfg).values - apply_linear(v, cfg).values
        w = u + (-v)
        assert np.all(P(w, -1) <= diff + 1e-10)
        assert np.all(diff <= P(w, 1) + 1e-10)


def test_extremal_operators_are_positively_homogeneous(rng):
    spec = GridSpec(1, 1.0, 65)
    p = KernelParams(1, 0.5, 1.0, 2.0, 0.0)
    u = random_function(spec, rng)
    a = apply_pucci(u, _pucci(p, 1)).values
    b = apply_pucci(2.0 * u, _pucci(p, 1)).values
    assert np.allclose(b, 2.0 * a, rtol=1e-12, atol=1e-12)


def test_isaac_with_single_member_is_linear(rng):
    spec = GridSpec(1, 1.0, 65)
    p = KernelParams(1, 0.5, 1.0, 2.0, 0.0)
    K = make_truncated_fractional_kernel(p, 1.0)
    u = random_function(spec, rng)
    isaac = OperatorConfig(p, "isaac", family=((IsaacMember(K),),))
    assert np.array_equal(apply_isaac(u, isaac).values,
                          apply_linear(u, OperatorConfig(p, "linear", K)).values)


def test_isaac_lies_between_extremal_operators(rng):
    spec = GridSpec(1, 1.0, 65)
    p = KernelParams(1, 0.75, 1.0, 2.0, 0.0)
    fam = tuple(tuple(IsaacMember(wavy_kernel(p, e, w, 0.0)) for e in (0.1, 0.4))
                for w in (3.0, 11.0))
    u = random_function(spec, rng)
    val = apply_isaac(u, OperatorConfig(p, "isaac", family=fam)).values
    assert np.all(apply_pucci(u, _pucci(p, -1)).values <= val + 1e-10)
    assert np.all(val <= apply_pucci(u, _pucci(p, 1)).values + 1e-10)


def test_periodic_translation_equivariance(rng):
    spec = GridSpec(1, 1.0, 64, Periodic())
    p = KernelParams(1, 0.5, 1.0, 2.0, 0.0)
    vals = rng.standard_normal(spec.shape)
    u = GridFunction(spec, vals)
    w = GridFunction(spec, np.roll(vals, 5))
    for cfg in (OperatorConfig(p, "linear", make_truncated_fractional_kernel(p, 1.0)),
                _pucci(p, 1)):
        a = apply_operator(u, cfg).values
        b = apply_operator(w, cfg).values
        assert np.allclose(np.roll(a, 5), b, rtol=0, atol=1e-10)


def test_nodes_subset_matches_full_grid(rng):
    spec = GridSpec(2, 1.0, 17)
    p = KernelParams(2, 0.75, 1.0, 2.0, 0.0)
    u = random_function(spec, rng)
    nodes = np.array([0, 17, 100, 288])
    for cfg in (OperatorConfig(p, "linear", make_truncated_fractional_kernel(p, 1.0)),
                _pucci(p, -1)):
        full = apply_operator(u, cfg).values.ravel()
        assert np.array_equal(apply_operator(u, cfg, nodes=nodes), full[nodes])


def test_linear_operator_matches_half_laplacian_of_gaussian():
    # L u for u = exp(-x^2) with K = |y|^{-2}: closed form via the Fourier symbol pi |xi|
    from scipy.integrate import quad
    spec = GridSpec(1, 8.0, 4097)
    p = KernelParams(1, 0.5, 1.0, 1.0, 0.0)
    u = GridFunction.from_callable(spec, lambda x: np.exp(-x[:, 0] ** 2))
    Lu = apply_linear(u, OperatorConfig(p, "linear", make_truncated_fractional_kernel(p, 1.0)))
    i = spec.nearest_index(0.0)
    # (-Delta)^{1/2}-type symbol: L u(0) = -(1/2pi) int pi|xi| sqrt(pi) e^{-xi^2/4} dxi
    ref = -quad(lambda k: np.pi * k * np.sqrt(np.pi) * np.exp(-k * k / 4), 0, np.inf)[0] / np.pi
    assert abs(Lu.values[i] - ref) < 1e-3 * abs(ref)


def test_apply_difference_compensators():
    spec = GridSpec(1, 1.0, 201)
    u = GridFunction.from_callable(spec, lambda x: 3.0 * x[:, 0])
    assert apply_difference(u, [0.0], [0.1], 0.25) == pytest.approx(0.3)
    assert apply_difference(u, [0.0], [0.1], 0.75, gradient_at_x=[3.0]) == pytest.approx(0.0, abs=1e-12)
    assert apply_difference(u, [0.0], [0.5], 0.5, gradient_at_x=[3.0],
                            compensator_radius=0.25) == pytest.approx(1.5)
    with pytest.raises(ConfigError):
        apply_difference(u, [0.0], [0.1], 0.5)


def test_stencil_weights_are_nonnegative():
    spec = GridSpec(2, 1.0, 17)
    for s in S_VALUES:
        p = KernelParams(2, s, 1.0, 2.0, 0.05)
        st = linear_stencil(spec, make_truncated_fractional_kernel(p, 1.0))
        assert np.all(st.wp >= 0) and np.all(st.a >= 0) and st.tail >= 0
        pd = pucci_data(spec, p)
        assert np.all(pd.slack_lat >= 0) and np.all(pd.tail_slack >= 0)


def test_wrong_kind_is_rejected():
    spec = GridSpec(1, 1.0, 17)
    p = KernelParams(1, 0.5, 1.0, 2.0, 0.0)
    u = GridFunction(spec, np.zeros(spec.shape))
    with pytest.raises(ConfigError):
        apply_linear(u, _pucci(p, 1))
    with pytest.raises(ConfigError):
        apply_pucci(u, OperatorConfig(p, "linear", make_truncated_fractional_kernel(p, 1.0)))
