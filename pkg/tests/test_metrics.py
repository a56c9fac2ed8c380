import math

import numpy as np
import pytest

from trunckern import (ConfigError, Constant, Cylinder, GridFunction, GridSpec,
                       HypothesisViolation, KernelParams, NumericalError, SpaceTimeField,
                       estimate_alpha, oscillation_decay, parabolic_distance,
                       partial_holder_seminorm, weak_harnack_ratio)
from trunckern.metrics import weight_integral


def _static(spec, fn, times=(-1.0, -0.5, -0.25, 0.0), s=0.5):
    u = GridFunction.from_callable(spec, fn)
    return SpaceTimeField([(t, u) for t in times], 0.25, spec, KernelParams(spec.d, s, 1, 2, 0))


def test_parabolic_distance():
    assert parabolic_distance(((0.0,), 0.0), ((0.3,), -0.04), 0.5) == pytest.approx(0.3)
    assert parabolic_distance(((0.0,), 0.0), ((0.1,), -0.25), 0.5) == pytest.approx(0.25)
    assert parabolic_distance(((0.0, 0.0), 0.0), ((0.0, 0.0), -0.25), 0.25) == pytest.approx(0.0625)


def test_cylinder_masks():
    Q = Cylinder.at_origin(0.5, 0.5)
    assert Q.duration == pytest.approx(0.5)
    assert list(Q.time_mask(np.array([-0.6, -0.5, -0.49, 0.0]))) == [False, False, True, True]
    assert list(Q.space_mask(np.array([[0.49], [0.5], [-0.2]]))) == [True, False, True]
    with pytest.raises(ConfigError):
        Cylinder(((0.0,), 0.5), 1.0, 0.5)


def test_lipschitz_profile_has_unit_seminorm():
    spec = GridSpec(1, 1.0, 129)
    f = _static(spec, lambda p: p[:, 0])
    rep = partial_holder_seminorm(f, Cylinder.at_origin(0.5, 0.5), 0.0, 1.0)
    assert rep.seminorm == pytest.approx(1.0, rel=1e-12)
    assert not rep.degenerate and not rep.subsampled


def test_square_root_profile_has_unit_half_seminorm():
    spec = GridSpec(1, 1.0, 257)
    f = _static(spec, lambda p: np.sqrt(np.abs(p[:, 0])))
    rep = partial_holder_seminorm(f, Cylinder.at_origin(0.5, 0.5), 0.0, 0.5)
    # |sqrt|x| - sqrt|y|| <= sqrt|x - y| with equality when one point is 0
    assert rep.seminorm == pytest.approx(1.0, rel=1e-12)


def test_truncation_excludes_close_pairs():
    spec = GridSpec(1, 1.0, 129)
    f = _static(spec, lambda p: np.sign(p[:, 0]) * (np.abs(p[:, 0]) > 0.01))
    Q = Cylinder.at_origin(0.5, 0.5)
    full = partial_holder_seminorm(f, Q, 0.0, 0.5).seminorm
    cut = partial_holder_seminorm(f, Q, 0.1, 0.5).seminorm
    assert cut < full
    # the jump of size 2 seen across the shortest admissible distance
    gap = spec.h * math.floor(0.1 / spec.h + 1)
    assert cut == pytest.approx(2.0 / math.sqrt(gap), rel=1e-12)
    assert partial_holder_seminorm(f, Q, 10.0, 0.5).degenerate


def test_subsampling_is_seeded():
    spec = GridSpec(1, 1.0, 65)
    rng = np.random.default_rng(0)
    snaps = [(t, GridFunction(spec, rng.random(65))) for t in (-0.5, -0.25, 0.0)]
    f = SpaceTimeField(snaps, 0.25, spec)
    Q = Cylinder.at_origin(0.5, 0.5)
    a = partial_holder_seminorm(f, Q, 0.0, 0.5, seed=3, max_pairs=500)
    b = partial_holder_seminorm(f, Q, 0.0, 0.5, seed=3, max_pairs=500)
    full = partial_holder_seminorm(f, Q, 0.0, 0.5)
    assert a.subsampled and a.seminorm == b.seminorm and a.seminorm <= full.seminorm


def test_alpha_range_is_checked():
    spec = GridSpec(1, 1.0, 17)
    f = _static(spec, lambda p: p[:, 0])
    with pytest.raises(ConfigError):
        partial_holder_seminorm(f, Cylinder.at_origin(0.5, 0.5), 0.0, 0.0)


@pytest.mark.parametrize("s", (0.25, 0.5, 0.75))
def test_harnack_ratio_of_constant_field(s):
    spec = GridSpec(1, 2.0, 513, Constant(1.0))
    times = np.linspace(-1.0, 0.0, 401)
    f = _static(spec, lambda p: np.ones(len(p)), times=times, s=s)
    rep = weak_harnack_ratio(f, Cylinder.at_origin(1.0, s))
    # weighted mass of 1 over the time slab equals (1 - 2^{-2s}) * weight integral
    expected_mass = (1.0 - 2.0 ** (-2 * s)) * weight_integral(1, s, 1.0)
    assert rep.weighted_mass == pytest.approx(expected_mass, rel=1e-9)
    assert rep.empirical_c_avg == pytest.approx(1.0, abs=1e-12)
    assert rep.inf_value == 1.0


def test_weight_integral_matches_quadrature():
    from scipy.integrate import quad
    for d, s, R in ((1, 0.5, 1.0), (2, 0.25, 2.0), (3, 0.75, 0.5)):
        area = {1: 2.0, 2: 2 * math.pi, 3: 4 * math.pi}[d]
        ref = area * quad(lambda r: r ** (d - 1) * (R + r) ** (-d - 2 * s), 0, np.inf)[0]
        assert weight_integral(d, s, R) == pytest.approx(ref, rel=1e-8)


def test_harnack_rejects_negative_fields():
    spec = GridSpec(1, 1.0, 33)
    f = _static(spec, lambda p: p[:, 0])
    with pytest.raises(HypothesisViolation):
        weak_harnack_ratio(f, Cylinder.at_origin(0.5, 0.5))


@pytest.mark.parametrize("beta", (0.3, 0.5, 0.8))
def test_alpha_estimate_recovers_power_profile(beta):
    spec = GridSpec(1, 2.0, 1025)
    f = _static(spec, lambda p: np.abs(p[:, 0]) ** beta)
    ahat, info = estimate_alpha(f, Cylinder.at_origin(1.0, 0.5))
    assert len(info["levels"]) >= 4
    # oscillation over the open ball of radius r on the grid is (largest node below r)^beta
    ks = np.array(info["levels"], float)
    x = spec.axis()
    osc = [np.max(np.abs(x[np.abs(x) < 4.0 ** -k]) ** beta) for k in ks]
    expected = -np.polyfit(ks * math.log(4.0), np.log(osc), 1)[0]
    assert ahat == pytest.approx(expected, rel=1e-12)
    assert abs(ahat - beta) < 0.06


def test_alpha_estimate_needs_resolved_levels():
    spec = GridSpec(1, 1.0, 17)
    f = _static(spec, lambda p: np.abs(p[:, 0]))
    with pytest.raises(NumericalError):
        estimate_alpha(f, Cylinder.at_origin(0.5, 0.5))


def test_oscillation_levels_stop_at_truncation_scale():
    spec = GridSpec(1, 2.0, 513)
    f = _static(spec, lambda p: p[:, 0])
    osc = oscillation_decay(f, 1.0, 6, rho=0.05)
    assert [k for k, _ in osc] == [0, 1, 2]
    assert osc[0][1] == pytest.approx(2.0, rel=1e-2)
