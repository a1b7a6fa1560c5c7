"""Limits of pointed finite metric measure spaces: approximations, weak limits, covers and systems."""

from .approx import (
    WeakApprox,
    glue,
    quasi_inverse,
    rough_inverse_weak,
    search_weak_approximation,
    verify_approximation,
    verify_ball_inclusions,
    verify_weak_approximation,
)
from .category import (
    SystemOfSpaces,
    direct_limit_stage,
    inverse_limit_stage,
    threads,
    verify_morphism,
    verify_system,
)
from .convergence import (
    bmttb_check,
    cover_failure_certificate,
    greedy_cover,
    pointwise_doubling_profile,
    tangent_sequence,
    uniform_bounded_finiteness,
    wpmgh_discrepancy,
    wpmgh_sequence_check,
)
from .mmspace import (
    Measure,
    PointMap,
    PointedSpace,
    ball,
    ball_mass,
    normalize_at_basepoint,
    pushforward,
    rescale,
    restrict,
    support,
    validate_space,
)
from .report import Verdict
from .weaklimit import (
    MeasureSequence,
    TestFamily,
    build_test_family,
    delta_metric,
    is_asymptotically_cauchy,
    lift_measure,
    prokhorov_tightness,
    weak_limit,
)

__all__ = [
    "WeakApprox",
    "glue",
    "quasi_inverse",
    "rough_inverse_weak",
    "search_weak_approximation",
    "verify_approximation",
    "verify_ball_inclusions",
    "verify_weak_approximation",
    "SystemOfSpaces",
    "direct_limit_stage",
    "inverse_limit_stage",
    "threads",
    "verify_morphism",
    "verify_system",
    "bmttb_check",
    "cover_failure_certificate",
    "greedy_cover",
    "pointwise_doubling_profile",
    "tangent_sequence",
    "uniform_bounded_finiteness",
    "wpmgh_discrepancy",
    "wpmgh_sequence_check",
    "Measure",
    "PointMap",
    "PointedSpace",
    "ball",
    "ball_mass",
    "normalize_at_basepoint",
    "pushforward",
    "rescale",
    "restrict",
    "support",
    "validate_space",
    "MeasureSequence",
    "TestFamily",
    "build_test_family",
    "delta_metric",
    "is_asymptotically_cauchy",
    "lift_measure",
    "prokhorov_tightness",
    "weak_limit",
    "Verdict",
]

__version__ = "0.1.0"
