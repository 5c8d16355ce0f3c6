""" Feature vectors x = f(I, p), empirical Jacobians J = df/dp and the
    functional blocks D = [x, J] that continuous regression trains on.

    Every feature vector carries a trailing bias entry fixed at 1; the
    matching Jacobian row is zero. """

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..exceptions import ShapeError
from ..image import ImageLike
from ..pdm import PdmModel, ShapeParams, compose, shape_jacobian
from .analytic import AnalyticFeatures
from .extractor import FeatureExtractor
from .pca import FeaturePca


@dataclass(frozen=True)
class FeatureJacobian:
    matrix: np.ndarray
    """ (d+1) x m, columns ordered as ShapeParams.to_vector(), bias row zero. """

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise ShapeError("Feature Jacobian has non-finite entries")


def feature_dim(extractor: FeatureExtractor, pca: Optional[FeaturePca]) -> int:
    """ Length of extracted feature vectors, bias included. """
    return (pca.d if pca is not None else extractor.raw_dim) + 1


def reduce(pca: Optional[FeaturePca], raw: np.ndarray) -> np.ndarray:
    reduced = pca.project(raw) if pca is not None else raw
    return np.append(reduced, 1.0)


def extract(
    extractor: FeatureExtractor,
    pca: Optional[FeaturePca],
    image: ImageLike,
    model: PdmModel,
    params: ShapeParams,
) -> np.ndarray:
    shape = compose(model, params)
    return reduce(pca, extractor.describe(image, shape.points))


def _chain_landmark_gradients(
    extractor: FeatureExtractor,
    pca: Optional[FeaturePca],
    grad_x: np.ndarray,
    grad_y: np.ndarray,
    ds_dp: np.ndarray,
) -> np.ndarray:
    """ Combines per-landmark raw gradients (block diagonal in landmark
        order) with ds/dp, projecting through the PCA first when present.
        The block structure keeps the projection at O(d D) instead of
        O(d D m). """
    n = extractor.n_points
    per = extractor.per_landmark_dim
    ds_dx, ds_dy = ds_dp[:n], ds_dp[n:]
    if pca is None:
        gx = grad_x.reshape(n, per, 1)
        gy = grad_y.reshape(n, per, 1)
        return (gx * ds_dx[:, None, :] + gy * ds_dy[:, None, :]).reshape(n * per, -1)
    d = pca.d
    projected_x = (pca.projection * grad_x).reshape(d, n, per).sum(axis=-1)
    projected_y = (pca.projection * grad_y).reshape(d, n, per).sum(axis=-1)
    return projected_x @ ds_dx + projected_y @ ds_dy


def jacobian(
    extractor: FeatureExtractor,
    pca: Optional[FeaturePca],
    image: ImageLike,
    model: PdmModel,
    params: ShapeParams,
    delta_x: float = 1.0,
) -> FeatureJacobian:
    """ Central differences of whole-shape shifts,
        J_x = [f(s_x + dx, s_y) - f(s_x - dx, s_y)] / 2dx, chained with the
        analytic ds/dp of the PDM. Two extraction passes. """
    if delta_x <= 0:
        raise ValueError(f"delta_x must be positive, got {delta_x}")
    points = compose(model, params).points
    plus_x, minus_x = extractor.stencil(image, points, axis=0, delta=delta_x)
    plus_y, minus_y = extractor.stencil(image, points, axis=1, delta=delta_x)
    grad_x = (plus_x - minus_x) / (2.0 * delta_x)
    grad_y = (plus_y - minus_y) / (2.0 * delta_x)
    matrix = _chain_landmark_gradients(extractor, pca, grad_x, grad_y, shape_jacobian(model, params))
    return FeatureJacobian(np.vstack([matrix, np.zeros((1, matrix.shape[1]))]))


def analytic_jacobian(
    extractor: AnalyticFeatures,
    pca: Optional[FeaturePca],
    model: PdmModel,
    params: ShapeParams,
) -> FeatureJacobian:
    """ Exact Jacobian of the analytic extractor, for oracle comparisons. """
    points = compose(model, params).points
    coordinate = extractor.coordinate_jacobian(points)
    matrix = _chain_landmark_gradients(
        extractor,
        pca,
        coordinate[..., 0].reshape(-1),
        coordinate[..., 1].reshape(-1),
        shape_jacobian(model, params),
    )
    return FeatureJacobian(np.vstack([matrix, np.zeros((1, matrix.shape[1]))]))


def extract_functional_block(
    extractor: FeatureExtractor,
    pca: Optional[FeaturePca],
    image: ImageLike,
    model: PdmModel,
    params: ShapeParams,
    delta_x: float = 1.0,
) -> np.ndarray:
    """ D = [x, J], (d+1) x (m+1), from exactly three extraction passes. """
    features = extract(extractor, pca, image, model, params)
    feature_jacobian = jacobian(extractor, pca, image, model, params, delta_x)
    return np.column_stack([features, feature_jacobian.matrix])
