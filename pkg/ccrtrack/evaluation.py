from typing import Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from .constants import CED_GRID_POINTS, CED_UPPER_BOUND
from .exceptions import ShapeError
from .pdm import Shape


def normalized_error(predicted: Shape, ground_truth: Shape, eye_corners: Tuple[int, int]) -> float:
    """ Mean point-to-point error divided by the outer-eye-corner distance
        of the ground truth. """
    if predicted.n_points != ground_truth.n_points:
        raise ShapeError(f"Shapes differ in size: {predicted.n_points} vs {ground_truth.n_points}")
    left, right = eye_corners
    inter_ocular = float(np.linalg.norm(ground_truth.points[left] - ground_truth.points[right]))
    if inter_ocular == 0.0:
        raise ShapeError("Eye corners coincide; the inter-ocular distance is zero")
    distances = np.linalg.norm(predicted.points - ground_truth.points, axis=1)
    return float(distances.mean()) / inter_ocular


def ced_and_auc(
    errors: Sequence[float],
    upper_bound: float = CED_UPPER_BOUND,
    points: int = CED_GRID_POINTS,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """ CED(t) = share of errors <= t on a uniform grid over [0, upper_bound],
        and its trapezoidal area divided by the grid span. """
    errors = np.sort(np.asarray(errors, dtype=float))
    if errors.size == 0:
        raise ValueError("At least one error value is required")
    if np.any(errors < 0) or np.any(np.isnan(errors)):
        raise ValueError("Errors must be non-negative numbers")
    if upper_bound <= 0 or points < 2:
        raise ValueError(f"Need a positive bound and at least 2 grid points, got {upper_bound} and {points}")
    thresholds = np.linspace(0.0, upper_bound, points)
    ced = np.searchsorted(errors, thresholds, side="right") / errors.size
    auc = float(trapezoid(ced, thresholds)) / upper_bound
    return thresholds, ced, auc
