""" Closed-form regressors: sampled (ridge) linear regression, continuous
    regression under a Gaussian-moment data term, and the legacy uniform
    continuous regression it generalises.

    Continuous regression never samples. It keeps per-image functional blocks
    D_j = [x_j, J_j] measured at the ground truth and solves

        R = A (sum_j D_j)^T (sum_j D_j B D_j^T + ridge I)^-1

    with A = [mu, Sigma + mu mu^T] and B = [[1, mu^T], [mu, Sigma + mu mu^T]]. """

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import linalg

from .constants import COVARIANCE_SHRINKAGE, PSD_TOLERANCE, SYMMETRY_TOLERANCE
from .exceptions import NotPositiveSemidefiniteError, RankDeficientError, ShapeError
from .features import FeatureExtractor, FeaturePca, extract_functional_block
from .image import ImageLike
from .pdm import PdmModel, ShapeParams

RIDGE_TRACE_FACTOR = 1e-3


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class LinearRegressor:
    matrix: np.ndarray
    """ m x (d+1), bias column last. """

    def __post_init__(self):
        object.__setattr__(self, "matrix", _readonly(self.matrix))
        if not np.all(np.isfinite(self.matrix)):
            raise ShapeError("Regressor has non-finite entries")

    @property
    def param_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.matrix.shape[1]


def predict(regressor: LinearRegressor, features: np.ndarray) -> np.ndarray:
    """ delta_p = R x; callers apply p <- p - delta_p. """
    if features.shape[0] != regressor.feature_dim:
        raise ShapeError(f"Regressor expects {regressor.feature_dim} features, got {features.shape[0]}")
    return regressor.matrix @ features


@dataclass(frozen=True)
class PerturbationStats:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = _readonly(np.reshape(self.mean, -1))
        covariance = _readonly(self.covariance)
        m = mean.shape[0]
        if covariance.shape != (m, m):
            raise ShapeError(f"Covariance must be {m} x {m}, got {covariance.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(covariance))):
            raise NotPositiveSemidefiniteError("Perturbation statistics must be finite")
        if np.max(np.abs(covariance - covariance.T), initial=0.0) > SYMMETRY_TOLERANCE * max(1.0, np.abs(covariance).max(initial=0.0)):
            raise NotPositiveSemidefiniteError("Covariance is not symmetric")
        if m and np.linalg.eigvalsh(symmetrize(covariance))[0] < -PSD_TOLERANCE * max(1.0, np.abs(covariance).max()):
            raise NotPositiveSemidefiniteError("Covariance has negative eigenvalues")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", covariance)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def second_moment(self) -> np.ndarray:
        return symmetrize(self.covariance + np.outer(self.mean, self.mean))

    def cross_moments(self) -> np.ndarray:
        """ A = [mu, Sigma + mu mu^T], m x (m+1). """
        return np.column_stack([self.mean, self.second_moment()])

    def moment_matrix(self) -> np.ndarray:
        """ B = [[1, mu^T], [mu, Sigma + mu mu^T]], (m+1) x (m+1). """
        m = self.dim
        moments = np.empty((m + 1, m + 1))
        moments[0, 0] = 1.0
        moments[0, 1:] = self.mean
        moments[1:, 0] = self.mean
        moments[1:, 1:] = self.second_moment()
        return moments

    def restrict(self, columns: Sequence[int]) -> "PerturbationStats":
        columns = list(columns)
        return PerturbationStats(self.mean[columns], self.covariance[np.ix_(columns, columns)])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """ size x m draws from N(mean, covariance). """
        return rng.multivariate_normal(self.mean, self.covariance, size=size, method="eigh")

    @classmethod
    def zeros(cls, dim: int) -> "PerturbationStats":
        return cls(np.zeros(dim), np.zeros((dim, dim)))

    @classmethod
    def from_samples(cls, samples: np.ndarray, shrinkage: float = COVARIANCE_SHRINKAGE) -> "PerturbationStats":
        """ Normal fit of the rows of `samples`, covariance shrunk toward its
            diagonal by `shrinkage`. """
        samples = np.asarray(samples, dtype=float)
        mean = samples.mean(axis=0)
        centred = samples - mean
        covariance = centred.T @ centred / max(samples.shape[0] - 1, 1)
        covariance = (1.0 - shrinkage) * covariance + shrinkage * np.diag(np.diag(covariance))
        return cls(mean, symmetrize(covariance))


@dataclass(frozen=True)
class FunctionalTrainingSet:
    blocks: np.ndarray
    """ M x (d+1) x (m+1) stack of D_j = [x_j, J_j]. """

    sum_d: np.ndarray
    """ Running sum of the blocks. """

    ridge: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", _readonly(self.blocks))
        object.__setattr__(self, "sum_d", _readonly(self.sum_d))
        if self.blocks.ndim != 3:
            raise ShapeError("Functional blocks must be an M x (d+1) x (m+1) stack")

    @classmethod
    def from_blocks(cls, blocks: Sequence[np.ndarray], ridge: Optional[float] = None) -> "FunctionalTrainingSet":
        stack = np.asarray(blocks, dtype=float)
        if stack.ndim != 3 or stack.shape[0] == 0:
            raise ShapeError("At least one (d+1) x (m+1) block is required")
        return cls(stack, stack.sum(axis=0), ridge)

    @property
    def count(self) -> int:
        return self.blocks.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.blocks.shape[1]

    @property
    def param_dim(self) -> int:
        return self.blocks.shape[2] - 1

    def append(self, block: np.ndarray) -> "FunctionalTrainingSet":
        block = np.asarray(block, dtype=float)
        if block.shape != self.blocks.shape[1:]:
            raise ShapeError(f"Block must be {self.blocks.shape[1:]}, got {block.shape}")
        return FunctionalTrainingSet(
            np.concatenate([self.blocks, block[None]]), self.sum_d + block, self.ridge
        )

    def restrict(self, param_columns: Sequence[int]) -> "FunctionalTrainingSet":
        """ Keeps the feature column and the listed parameter columns. """
        keep = [0] + [1 + c for c in param_columns]
        return FunctionalTrainingSet.from_blocks(self.blocks[:, :, keep], self.ridge)

    def moment_matrix(self, moments: np.ndarray) -> np.ndarray:
        """ sum_j D_j B D_j^T, never materialising B kron I_M. """
        return symmetrize(np.tensordot(self.blocks @ moments, self.blocks, axes=([0, 2], [0, 2])))


@dataclass(frozen=True)
class SampledSolverState:
    v: np.ndarray
    """ (X X^T + ridge I)^-1 """

    ridge: float

    def __post_init__(self):
        object.__setattr__(self, "v", _readonly(self.v))


@dataclass(frozen=True)
class CrSolverState:
    a: np.ndarray
    b: np.ndarray
    sum_d: np.ndarray
    v_inv: np.ndarray
    ridge: float

    def __post_init__(self):
        for name in ("a", "b", "sum_d", "v_inv"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    def regressor(self) -> LinearRegressor:
        return LinearRegressor(self.a @ self.sum_d.T @ self.v_inv)


def resolve_ridge(ridge: Optional[float], normal: np.ndarray) -> float:
    """ Explicit ridge, or 1e-3 * trace(V) / d by default. """
    if ridge is not None:
        if ridge < 0:
            raise ValueError(f"ridge must be non-negative, got {ridge}")
        return float(ridge)
    return RIDGE_TRACE_FACTOR * float(np.trace(normal)) / normal.shape[0]


def _regularised_inverse(normal: np.ndarray, ridge: float) -> np.ndarray:
    regularised = normal + ridge * np.eye(normal.shape[0])
    try:
        factor = linalg.cho_factor(regularised)
    except linalg.LinAlgError:
        raise RankDeficientError("rank deficient; set ridge > 0")
    inverse = linalg.cho_solve(factor, np.eye(normal.shape[0]))
    if ridge == 0.0 and np.linalg.cond(regularised) > 1.0 / np.finfo(float).eps:
        raise RankDeficientError("rank deficient; set ridge > 0")
    return symmetrize(inverse)


def solve_sampled(x: np.ndarray, y: np.ndarray, ridge: float = 0.0) -> Tuple[LinearRegressor, SampledSolverState]:
    """ R = Y X^T (X X^T + ridge I)^-1, keeping the inverse for updates. """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1] or x.shape[1] < 1:
        raise ShapeError(f"Expected d x N features and m x N targets, got {x.shape} and {y.shape}")
    if ridge == 0.0 and np.linalg.matrix_rank(x) < x.shape[0]:
        raise RankDeficientError("rank deficient; set ridge > 0")
    v = _regularised_inverse(x @ x.T, ridge)
    return LinearRegressor(y @ x.T @ v), SampledSolverState(v, float(ridge))


def train_sampled(x: np.ndarray, y: np.ndarray, ridge: float = 0.0) -> LinearRegressor:
    """ Minimises ||Y - R X||_F^2 + ridge ||R||_F^2. """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1] or x.shape[1] < 1:
        raise ShapeError(f"Expected d x N features and m x N targets, got {x.shape} and {y.shape}")
    if ridge == 0.0 and np.linalg.matrix_rank(x) < x.shape[0]:
        raise RankDeficientError("rank deficient; set ridge > 0")
    normal = x @ x.T + ridge * np.eye(x.shape[0])
    return LinearRegressor(linalg.solve(normal, x @ y.T, assume_a="pos").T)


def build_functional_set(
    images: Sequence[ImageLike],
    ground_truth: Sequence[ShapeParams],
    extractor: FeatureExtractor,
    pca: Optional[FeaturePca],
    model: PdmModel,
    ridge: Optional[float] = None,
    delta_x: float = 1.0,
    jobs: int = 1,
) -> FunctionalTrainingSet:
    """ One functional block per image at its ground truth; no sampling. """
    if len(images) != len(ground_truth) or not images:
        raise ShapeError("Need one ground-truth parameter set per image, and at least one image")

    def block(index: int) -> np.ndarray:
        return extract_functional_block(extractor, pca, images[index], model, ground_truth[index], delta_x)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            blocks = list(pool.map(block, range(len(images))))
    else:
        blocks = [block(index) for index in range(len(images))]
    logger.debug("Built functional training set", count=len(blocks), block_shape=blocks[0].shape)
    return FunctionalTrainingSet.from_blocks(blocks, ridge)


def _check_dims(training_set: FunctionalTrainingSet, stats: PerturbationStats) -> None:
    if stats.dim != training_set.param_dim:
        raise ShapeError(
            f"Data term has {stats.dim} parameters but the training set has {training_set.param_dim}"
        )


def train_continuous(
    training_set: FunctionalTrainingSet,
    stats: PerturbationStats,
    ridge: Optional[float] = None,
) -> Tuple[LinearRegressor, CrSolverState]:
    """ Compact closed form R = A (sum D)^T V^-1. """
    _check_dims(training_set, stats)
    moments = stats.moment_matrix()
    normal = training_set.moment_matrix(moments)
    ridge = resolve_ridge(ridge if ridge is not None else training_set.ridge, normal)
    v_inv = _regularised_inverse(normal, ridge)
    state = CrSolverState(stats.cross_moments(), moments, training_set.sum_d, v_inv, ridge)
    return state.regressor(), state


def train_continuous_expanded(
    training_set: FunctionalTrainingSet,
    stats: PerturbationStats,
    ridge: Optional[float] = None,
) -> LinearRegressor:
    """ Same solution accumulated term by term,

        R = [sum_j mu x_j^T + S J_j^T] [sum_j x_j x_j^T + x_j mu^T J_j^T
                                        + J_j mu x_j^T + J_j S J_j^T]^-1

        with S = Sigma + mu mu^T. """
    _check_dims(training_set, stats)
    mu = stats.mean
    second = stats.second_moment()
    dim = training_set.feature_dim
    left = np.zeros((stats.dim, dim))
    right = np.zeros((dim, dim))
    for block in training_set.blocks:
        x, jac = block[:, 0], block[:, 1:]
        jac_mu = jac @ mu
        left += np.outer(mu, x) + second @ jac.T
        right += np.outer(x, x) + np.outer(x, jac_mu) + np.outer(jac_mu, x) + jac @ second @ jac.T
    right = symmetrize(right)
    ridge = resolve_ridge(ridge if ridge is not None else training_set.ridge, right)
    right += ridge * np.eye(dim)
    return LinearRegressor(linalg.solve(right, left.T, assume_a="sym").T)


def uniform_equivalent_stats(r: np.ndarray, eigenvalues: np.ndarray) -> PerturbationStats:
    """ Moments of the uniform box (-r_i sqrt(l_i), r_i sqrt(l_i)). """
    variances = np.asarray(r, dtype=float) ** 2 * np.asarray(eigenvalues, dtype=float) / 3.0
    return PerturbationStats(np.zeros(variances.shape[0]), np.diag(variances))


def train_continuous_legacy(
    training_set: FunctionalTrainingSet,
    r: np.ndarray,
    eigenvalues: np.ndarray,
    ridge: Optional[float] = None,
) -> LinearRegressor:
    """ Uniform continuous regression over flexible parameters only:
        R = S(r) (sum_j J_j^T) (sum_j x_j x_j^T + J_j S(r) J_j^T)^-1 with
        S(r) = diag(r_i^2 l_i / 3). `training_set` must hold flexible
        columns only (see FunctionalTrainingSet.restrict). """
    r = np.asarray(r, dtype=float)
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if not (r.shape == eigenvalues.shape == (training_set.param_dim,)):
        raise ShapeError("Need one r_i and one eigenvalue per flexible parameter")
    box = r ** 2 * eigenvalues / 3.0
    features = training_set.blocks[:, :, 0]
    jacobians = training_set.blocks[:, :, 1:]
    normal = features.T @ features + np.einsum("jik,k,jlk->il", jacobians, box, jacobians)
    normal = symmetrize(normal)
    ridge = resolve_ridge(ridge if ridge is not None else training_set.ridge, normal)
    v_inv = _regularised_inverse(normal, ridge)
    return LinearRegressor(box[:, None] * training_set.sum_d[:, 1:].T @ v_inv)


def expected_loss(
    regressor: LinearRegressor,
    training_set: FunctionalTrainingSet,
    stats: PerturbationStats,
    ridge: float = 0.0,
) -> float:
    """ sum_j E ||dp - R (x_j + J_j dp)||^2 + ridge ||R||^2 under the data term. """
    matrix = regressor.matrix
    total = ridge * float(np.sum(matrix * matrix))
    for block in training_set.blocks:
        x, jac = block[:, 0], block[:, 1:]
        residual_map = np.eye(stats.dim) - matrix @ jac
        quadratic = residual_map.T @ residual_map
        linear = jac.T @ matrix.T @ matrix @ x - matrix @ x
        total += (
            float(np.trace(quadratic @ stats.covariance))
            + float(stats.mean @ quadratic @ stats.mean)
            + 2.0 * float(stats.mean @ linear)
            + float(x @ matrix.T @ matrix @ x)
        )
    return total


def expected_loss_gradient(
    regressor: LinearRegressor,
    training_set: FunctionalTrainingSet,
    stats: PerturbationStats,
    ridge: float = 0.0,
) -> np.ndarray:
    """ d expected_loss / dR, assembled from the per-term derivatives. """
    matrix = regressor.matrix
    mu = stats.mean
    sigma = stats.covariance
    outer_mu = np.outer(mu, mu)
    gradient = 2.0 * ridge * matrix
    for block in training_set.blocks:
        x, jac = block[:, 0], block[:, 1:]
        gradient += 2.0 * matrix @ jac @ sigma @ jac.T - 2.0 * sigma @ jac.T
        gradient += 2.0 * matrix @ jac @ outer_mu @ jac.T - 2.0 * outer_mu @ jac.T
        cross = np.outer(x, jac @ mu)
        gradient += 2.0 * matrix @ (cross + cross.T) - 2.0 * np.outer(mu, x)
        gradient += 2.0 * matrix @ np.outer(x, x)
    return gradient
