"""Learned selection of informative CT projections on a spherical trajectory.

The package covers the full loop: synthetic specimens and exact projections,
pose-dependent detectability, constrained label generation, a differentiable
ranking head with a straight-through top-k selection, algebraic
reconstruction, and ROI image-quality reporting.
"""

__version__ = "0.1.0"

from .errors import (
    InfeasibleSelectionError,
    InvalidInputError,
    MissingArtifactError,
    ProblemTooLargeError,
    ProjSelectError,
)
from .geometry import ScanPosition, SystemGeometry, fibonacci_sphere, haversine, pose_from_position
from .softrank import ascending_soft_rank, hard_rank, isotonic_regression_decreasing, soft_rank
from .ste import SelectionMask, ste_vjp, threshold_topk

__all__ = [
    "InfeasibleSelectionError",
    "InvalidInputError",
    "MissingArtifactError",
    "ProblemTooLargeError",
    "ProjSelectError",
    "ScanPosition",
    "SelectionMask",
    "SystemGeometry",
    "ascending_soft_rank",
    "fibonacci_sphere",
    "hard_rank",
    "haversine",
    "isotonic_regression_decreasing",
    "pose_from_position",
    "soft_rank",
    "ste_vjp",
    "threshold_topk",
]
