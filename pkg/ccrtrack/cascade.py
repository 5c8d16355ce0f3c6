""" Cascaded regression: sampled SDM with parallel-SDM statistics
    propagation, cascaded continuous regression (CCR), and cascade fitting.

    Every level predicts a parameter increment from features at the current
    estimate, p <- p - R x. Training targets are the perturbations
    themselves, so the level-i residual is dp - R x. """

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from loguru import logger

from .exceptions import DegenerateStatisticsError, FitError, ShapeError, ShapeOutOfFrameError
from .features import FeatureExtractor, FeaturePca, extract
from .image import ImageLike
from .logging import log_elapsed_time
from .pdm import PdmModel, ShapeParams, compose
from .regression import (
    CrSolverState,
    FunctionalTrainingSet,
    LinearRegressor,
    PerturbationStats,
    SampledSolverState,
    build_functional_set,
    predict,
    resolve_ridge,
    solve_sampled,
    train_continuous,
)

T = TypeVar("T")


class Method(str, Enum):
    SDM = "sdm"
    CCR = "ccr"


@dataclass(frozen=True)
class CascadeLevel:
    regressor: LinearRegressor
    stats: PerturbationStats
    """ Perturbation distribution the level was trained on. """

    solver_state: Optional[Union[CrSolverState, SampledSolverState]] = None


@dataclass(frozen=True)
class LevelErrors:
    """ Mean residual of a batch of training perturbations. """

    parameter_norm: float
    landmark_error: float
    """ Mean point-to-point error divided by the ground-truth shape size. """


@dataclass(frozen=True)
class CascadeModel:
    levels: Tuple[CascadeLevel, ...]
    pdm: PdmModel
    extractor: FeatureExtractor
    pca: Optional[FeaturePca]
    method: Method
    columns: Tuple[int, ...] = ()
    """ Parameter indices the cascade regresses; empty means all. """

    training_errors: Tuple[LevelErrors, ...] = ()
    """ Entry 0 measures the initial perturbations, entry i the residual
        after level i. """

    functional_set: Optional[FunctionalTrainingSet] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.levels:
            raise ShapeError("A cascade needs at least one level")
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "method", Method(self.method))
        columns = tuple(self.columns) or tuple(range(self.pdm.n_params))
        object.__setattr__(self, "columns", columns)
        for level in self.levels:
            if level.regressor.param_dim != len(columns) or level.stats.dim != len(columns):
                raise ShapeError("Cascade levels do not match the regressed parameter columns")
            if level.regressor.feature_dim != self.levels[0].regressor.feature_dim:
                raise ShapeError("Cascade levels disagree on the feature dimension")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def replace_levels(self, levels: Sequence[CascadeLevel]) -> "CascadeModel":
        return replace(self, levels=tuple(levels))


def _map(function: Callable[[int], T], count: int, jobs: int) -> List[T]:
    """ Ordered map over range(count), threaded when jobs > 1. """
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(function, range(count)))
    return [function(index) for index in range(count)]


def _level_errors(pdm: PdmModel, truth: np.ndarray, residuals: np.ndarray, columns: Sequence[int]) -> LevelErrors:
    """ truth: M x m ground-truth vectors; residuals: M x K x |columns|. """
    errors = []
    for vector, offsets in zip(truth, residuals):
        reference = compose(pdm, ShapeParams.from_vector(vector)).points
        centred = reference - reference.mean(axis=0)
        size = float(np.sqrt(np.mean(np.sum(centred ** 2, axis=1))))
        for offset in offsets:
            perturbed = vector.copy()
            perturbed[list(columns)] += offset
            points = compose(pdm, ShapeParams.from_vector(perturbed)).points
            errors.append(float(np.mean(np.linalg.norm(points - reference, axis=1))) / size)
    return LevelErrors(
        parameter_norm=float(np.mean(np.linalg.norm(residuals.reshape(-1, residuals.shape[-1]), axis=1))),
        landmark_error=float(np.mean(errors)),
    )


def _next_stats(residuals: np.ndarray, level: int) -> PerturbationStats:
    stats = PerturbationStats.from_samples(residuals.reshape(-1, residuals.shape[-1]))
    if not np.trace(stats.covariance) > np.finfo(float).tiny:
        raise DegenerateStatisticsError(f"degenerate level statistics after level {level}")
    return stats


def _ground_truth_matrix(ground_truth: Sequence[ShapeParams], pdm: PdmModel) -> np.ndarray:
    truth = np.stack([p.to_vector() for p in ground_truth])
    if truth.shape[1] != pdm.n_params:
        raise ShapeError(f"Ground truth has {truth.shape[1]} parameters, the PDM has {pdm.n_params}")
    return truth


def train_sdm(
    images: Sequence[ImageLike],
    ground_truth: Sequence[ShapeParams],
    pdm: PdmModel,
    extractor: FeatureExtractor,
    pca: Optional[FeaturePca],
    init_stats: PerturbationStats,
    n_perturbations: int = 10,
    n_levels: int = 3,
    ridge: Optional[float] = None,
    seed: int = 0,
    jobs: int = 1,
) -> CascadeModel:
    """ Parallel SDM: level i is trained on `n_perturbations` draws per image
        from N(p* + mu_i, Sigma_i); its residuals give level i+1 stats. """
    if n_perturbations < 1 or n_levels < 1:
        raise ValueError(f"Need at least one perturbation and one level, got {n_perturbations} and {n_levels}")
    if len(images) != len(ground_truth) or not images:
        raise ShapeError("Need one ground-truth parameter set per image, and at least one image")
    truth = _ground_truth_matrix(ground_truth, pdm)
    if init_stats.dim != pdm.n_params:
        raise ShapeError(f"Initial statistics have {init_stats.dim} parameters, the PDM has {pdm.n_params}")
    rng = np.random.default_rng(seed)
    n_images = len(images)
    stats = init_stats
    levels = []
    errors = []

    for level in range(n_levels):
        offsets = stats.sample(rng, n_images * n_perturbations).reshape(n_images, n_perturbations, -1)
        if level == 0:
            errors.append(_level_errors(pdm, truth, offsets, range(pdm.n_params)))

        def image_features(index: int) -> np.ndarray:
            return np.stack([
                extract(extractor, pca, images[index], pdm, ShapeParams.from_vector(truth[index] + offset))
                for offset in offsets[index]
            ])

        with log_elapsed_time("sdm sampling and extraction", level=level):
            features = np.concatenate(_map(image_features, n_images, jobs))
        x = features.T
        y = offsets.reshape(-1, offsets.shape[-1]).T
        level_ridge = resolve_ridge(ridge, x @ x.T)
        regressor, solver_state = solve_sampled(x, y, level_ridge)
        levels.append(CascadeLevel(regressor, stats, solver_state))

        residuals = (y - regressor.matrix @ x).T.reshape(n_images, n_perturbations, -1)
        errors.append(_level_errors(pdm, truth, residuals, range(pdm.n_params)))
        logger.info(
            "Trained cascade level",
            method=Method.SDM.value,
            level=level,
            ridge=level_ridge,
            mean_residual=errors[-1].parameter_norm,
        )
        if level + 1 < n_levels:
            stats = _next_stats(residuals, level)

    return CascadeModel(tuple(levels), pdm, extractor, pca, Method.SDM, training_errors=tuple(errors))


def _ccr_levels(
    functional_set: FunctionalTrainingSet,
    init_stats: PerturbationStats,
    n_levels: int,
    ridge: Optional[float],
    validation_perturbations: int,
    seed: int,
) -> Tuple[List[CascadeLevel], List[np.ndarray]]:
    """ Trains every CCR level from one functional set. Next-level statistics
        come from validation perturbations pushed through the linearised
        features x* + J* dp, so no image is read here. Returns the levels
        and the residual batches (initial offsets first). """
    if functional_set.param_dim != init_stats.dim:
        raise ShapeError(
            f"Data term has {init_stats.dim} parameters but the functional set has {functional_set.param_dim}"
        )
    rng = np.random.default_rng(seed)
    features = functional_set.blocks[:, :, 0]
    jacobians = functional_set.blocks[:, :, 1:]
    n_images = functional_set.count
    stats = init_stats
    levels = []
    batches = []

    for level in range(n_levels):
        regressor, solver_state = train_continuous(functional_set, stats, ridge)
        levels.append(CascadeLevel(regressor, stats, solver_state))
        offsets = stats.sample(rng, n_images * validation_perturbations).reshape(
            n_images, validation_perturbations, -1
        )
        linearised = features[:, None, :] + np.einsum("jdm,jkm->jkd", jacobians, offsets)
        residuals = offsets - linearised @ regressor.matrix.T
        if level == 0:
            batches.append(offsets)
        batches.append(residuals)
        logger.info(
            "Trained cascade level",
            method=Method.CCR.value,
            level=level,
            ridge=solver_state.ridge,
            mean_residual=float(np.mean(np.linalg.norm(residuals, axis=-1))),
        )
        if level + 1 < n_levels:
            stats = _next_stats(residuals, level)
    return levels, batches


def _assemble_ccr(
    pdm: PdmModel,
    extractor: FeatureExtractor,
    pca: Optional[FeaturePca],
    functional_set: FunctionalTrainingSet,
    init_stats: PerturbationStats,
    columns: Tuple[int, ...],
    n_levels: int,
    ridge: Optional[float],
    validation_perturbations: int,
    seed: int,
    truth: Optional[np.ndarray],
) -> CascadeModel:
    regressed = functional_set if len(columns) == functional_set.param_dim else functional_set.restrict(columns)
    with log_elapsed_time("ccr solve", levels=n_levels):
        levels, batches = _ccr_levels(regressed, init_stats, n_levels, ridge, validation_perturbations, seed)
    if truth is not None:
        errors = tuple(_level_errors(pdm, truth, batch, columns) for batch in batches)
    else:
        errors = tuple(
            LevelErrors(float(np.mean(np.linalg.norm(batch, axis=-1))), float("nan")) for batch in batches
        )
    return CascadeModel(
        tuple(levels),
        pdm,
        extractor,
        pca,
        Method.CCR,
        columns=columns,
        training_errors=errors,
        functional_set=functional_set,
    )


def train_ccr(
    images: Sequence[ImageLike],
    ground_truth: Sequence[ShapeParams],
    pdm: PdmModel,
    extractor: FeatureExtractor,
    pca: Optional[FeaturePca],
    init_stats: PerturbationStats,
    n_levels: int = 3,
    ridge: Optional[float] = None,
    validation_perturbations: int = 10,
    seed: int = 0,
    jobs: int = 1,
    columns: Optional[Sequence[int]] = None,
    delta_x: float = 1.0,
) -> CascadeModel:
    """ Cascaded continuous regression. Regressors are never fitted to
        samples; sampling only estimates the next level's data term.
        `init_stats` covers the regressed `columns` (all parameters by
        default, rigid ones included). """
    if n_levels < 1 or validation_perturbations < 2:
        raise ValueError(
            f"Need at least one level and two validation perturbations, got {n_levels} and {validation_perturbations}"
        )
    if len(images) != len(ground_truth) or not images:
        raise ShapeError("Need one ground-truth parameter set per image, and at least one image")
    truth = _ground_truth_matrix(ground_truth, pdm)
    columns = tuple(columns) if columns is not None else tuple(range(pdm.n_params))
    with log_elapsed_time("ccr functional set", images=len(images)):
        functional_set = build_functional_set(images, ground_truth, extractor, pca, pdm, ridge, delta_x, jobs)
    return _assemble_ccr(
        pdm, extractor, pca, functional_set, init_stats, columns, n_levels, ridge, validation_perturbations, seed, truth
    )


def retrain_ccr(
    model: CascadeModel,
    functional_set: FunctionalTrainingSet,
    init_stats: PerturbationStats,
    n_levels: Optional[int] = None,
    ridge: Optional[float] = None,
    validation_perturbations: int = 10,
    seed: int = 0,
) -> CascadeModel:
    """ Re-trains a CCR cascade under a new data term, reusing a functional
        set built at the ground truth. No image is read. """
    return _assemble_ccr(
        model.pdm,
        model.extractor,
        model.pca,
        functional_set,
        init_stats,
        model.columns,
        n_levels or model.n_levels,
        ridge,
        validation_perturbations,
        seed,
        None,
    )


def fit(model: CascadeModel, image: ImageLike, p0: ShapeParams) -> ShapeParams:
    """ Runs exactly n_levels updates p <- p - R x from `p0`. """
    vector = p0.to_vector().copy()
    if vector.shape[0] != model.pdm.n_params:
        raise ShapeError(f"Expected {model.pdm.n_params} parameters, got {vector.shape[0]}")
    columns = list(model.columns)
    params = p0
    for index, level in enumerate(model.levels):
        try:
            features = extract(model.extractor, model.pca, image, model.pdm, params)
        except ShapeOutOfFrameError:
            raise FitError(f"shape out of frame at cascade level {index}", last_params=params, level=index)
        vector[columns] -= predict(level.regressor, features)
        try:
            params = ShapeParams.from_vector(vector)
        except ShapeError:
            raise FitError(f"invalid estimate after cascade level {index}", last_params=params, level=index)
    return params
