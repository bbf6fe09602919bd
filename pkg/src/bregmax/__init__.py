"""Numerical tools for the largest divergence of a probability measure from a separable-generator family."""

from .bbar import (
    AmbiguousMaximizer,
    BbarMaxResult,
    BbarResult,
    Direction,
    ScanReport,
    TrialRecord,
    bbar_classical,
    bbar_eval,
    classify_side,
    conjecture_scan,
    dbar,
    family_from_direction,
    fiber_point,
    maximize_bbar,
    normalize_direction,
    phi,
    psi,
)
from .beta import (
    CLASSICAL,
    CUSTOM,
    ENTROPY_QUADRATIC,
    BetaSystem,
    CustomGenerator,
    beta_eval,
    check_generator_limits,
    conjugate_eval,
    inverse_link_eval,
    link_eval,
    make_classical,
    make_custom,
    make_entropy_quadratic,
)
from .errors import *  # noqa: F401,F403
from .family import (
    FacialSet,
    Instance,
    Pm,
    brute_force_faces,
    facial_set,
    kernel_basis,
    lambda_of_theta,
    moment_map,
    pm_of_theta,
    upsilon,
    upsilon_grad,
    upsilon_hess,
)
from .io import load_direction, load_instance, load_pm, parse_instance
from .maximize import LocalOptimum, MaxReport, check_positive_gap, criticality_residual, maximize_divergence
from .numerics import DEFAULT_TOL, Tolerances
from .projection import ProjectionResult, bregman_div, div_from_family, h_energy, rb_project
from .verify import VerifyReport, cmd_verify

__version__ = "0.1.0"
