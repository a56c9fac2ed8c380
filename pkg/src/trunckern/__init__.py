"""Monotone finite-difference schemes for truncated nonlocal parabolic equations.

The public API is re-exported here; see the submodules for details.
"""
from types import ModuleType as _ModuleType

from .config import ExperimentConfig, parse_config, parse_text
from .errors import (ConfigError, HypothesisViolation, NumericalError, QuadratureError,
                     TrunckernError)
from .evolution import (ConvergenceReport, EvolutionConfig, SpaceTimeField, cfl_dt,
                        read_snapshots, solve_cauchy, solve_elliptic,
                        solve_truncation_sequence, step_explicit, write_snapshots)
from .experiment import RunRecord, emit_report, run_experiment
from .grid import Constant, Given, GridFunction, GridSpec, Periodic
from .kernels import (KernelFn, KernelParams, ValidationReport, annulus_mass, kernel_l1_norm,
                      lower_kernel, make_truncated_fractional_kernel, make_user_kernel,
                      validate_ellipticity)
from .metrics import (Cylinder, HarnackReport, RegularityReport, estimate_alpha,
                      oscillation_decay, parabolic_distance, partial_holder_seminorm,
                      weak_harnack_ratio)
from .operators import (IsaacMember, OperatorConfig, apply_difference, apply_isaac,
                        apply_linear, apply_operator, apply_pucci, cap_violation,
                        operator_mass)
from .oracles import (BumpProfile, brute_force_operator, bump_bound_check,
                      half_laplacian_example, lemma_a1_check, pucci_holder_quotient)

__version__ = "0.1.0"

__all__ = [name for name, obj in dict(globals()).items()
           if not name.startswith("_") and not isinstance(obj, _ModuleType)]
