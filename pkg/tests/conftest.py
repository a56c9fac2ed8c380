import numpy as np
import pytest

from trunckern import (Constant, GridFunction, GridSpec, KernelParams, cap_violation,
                       make_truncated_fractional_kernel, make_user_kernel)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def wavy_kernel(params, eps, omega, phase):
    """Symmetric kernel ``K_low (1 + eps (1 + cos(omega log|y| + phase)))``.

    With ``Lambda >= 2 lambda`` and ``eps <= 1/2`` it stays inside the
    admissible class.
    """
    base = make_truncated_fractional_kernel(params, params.lam)

    def ev(y):
        r = np.linalg.norm(y, axis=-1)
        return base.eval(y) * (1.0 + eps * (1.0 + np.cos(omega * np.log(r) + phase)))
    return make_user_kernel(ev, params, True, label="wavy")


def capped_wavy_kernel(spec, params, rng, tries=200):
    """Draw a wavy kernel whose stencil on ``spec`` respects the annulus caps."""
    for _ in range(tries):
        K = wavy_kernel(params, rng.uniform(0, 0.5), rng.uniform(0.5, 6.0), rng.uniform(0, 6.3))
        if cap_violation(spec, K) <= 0.0:
            return K
    raise RuntimeError("no cap-respecting kernel drawn")


def random_function(spec, rng, ext=0.0, scale=1.0):
    return GridFunction(spec.with_extension(Constant(ext)),
                        scale * rng.standard_normal(spec.shape))


def smooth_function(spec, shift=0.0):
    return GridFunction.from_callable(
        spec, lambda p: np.exp(-np.sum((p - shift) ** 2, axis=1)))
