""" Online model updates from tracked frames.

    Incremental SDM adds K sampled (x, dp) pairs per level with the rank-K
    update of V = (X X^T + ridge I)^-1. iCCR adds one functional block
    D_S = [x, J] measured at the tracker's own estimate and refreshes V^-1
    with the Woodbury identity, so the only matrix inverted is
    (m+1) x (m+1) whatever the feature dimension. Ridge terms stay at the
    values resolved during training. """

import threading
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import linalg

from .cascade import CascadeLevel, CascadeModel, Method
from .exceptions import DataTermNotInvertibleError, ShapeError
from .features import extract, extract_functional_block
from .image import ImageLike
from .pdm import ShapeParams
from .regression import CrSolverState, FunctionalTrainingSet, LinearRegressor, SampledSolverState, symmetrize


@dataclass(frozen=True)
class IncrementalSdmState:
    model: CascadeModel
    n_samples: int = 10
    """ K, perturbations drawn per level and per frame. """

    updates: int = 0

    def __post_init__(self):
        if self.model.method != Method.SDM:
            raise ValueError(f"Incremental SDM needs an SDM cascade, got {self.model.method.value}")
        if any(not isinstance(level.solver_state, SampledSolverState) for level in self.model.levels):
            raise ValueError("Every SDM level must carry its sampled solver state")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be positive, got {self.n_samples}")


@dataclass(frozen=True)
class IccrState:
    model: CascadeModel
    updates: int = 0
    refresh_every: Optional[int] = None
    """ Re-invert V from the stored blocks every this many updates. """

    def __post_init__(self):
        if self.model.method != Method.CCR:
            raise ValueError(f"iCCR needs a CCR cascade, got {self.model.method.value}")
        if any(not isinstance(level.solver_state, CrSolverState) for level in self.model.levels):
            raise ValueError("Every CCR level must carry its continuous solver state")
        if self.refresh_every is not None:
            if self.refresh_every < 1:
                raise ValueError(f"refresh_every must be positive, got {self.refresh_every}")
            if self.model.functional_set is None:
                raise ValueError("Periodic refresh needs the model's functional set")


def isdm_level_update(
    regressor: LinearRegressor,
    state: SampledSolverState,
    x: np.ndarray,
    y: np.ndarray,
) -> Tuple[LinearRegressor, SampledSolverState]:
    """ Adds the K columns of (x, y):

        U = (I_K + X_S^T V X_S)^-1,  Q = X_S U X_S^T V,
        V' = V - V Q,                R' = R - R Q + Y_S X_S^T V'. """
    if x.shape[1] == 0:
        return regressor, state
    if x.shape[0] != state.v.shape[0] or y.shape != (regressor.param_dim, x.shape[1]):
        raise ShapeError(f"Update samples {x.shape} / {y.shape} do not match the level")
    v = state.v
    inner = np.eye(x.shape[1]) + x.T @ v @ x
    u = linalg.inv(symmetrize(inner))
    q = x @ u @ x.T @ v
    v_new = symmetrize(v - v @ q)
    matrix = regressor.matrix - regressor.matrix @ q + y @ x.T @ v_new
    return LinearRegressor(matrix), SampledSolverState(v_new, state.ridge)


def isdm_update_samples(state: IncrementalSdmState, samples: Sequence[Tuple[np.ndarray, np.ndarray]]) -> IncrementalSdmState:
    """ One (X_S, Y_S) pair per level. Non-finite samples leave the state
        unchanged. """
    if len(samples) != state.model.n_levels:
        raise ShapeError(f"Expected samples for {state.model.n_levels} levels, got {len(samples)}")
    if not all(np.all(np.isfinite(x)) and np.all(np.isfinite(y)) for x, y in samples):
        logger.warning("Rejected incremental SDM update with non-finite samples", updates=state.updates)
        return state
    levels = []
    for level, (x, y) in zip(state.model.levels, samples):
        regressor, solver_state = isdm_level_update(level.regressor, level.solver_state, x, y)
        levels.append(CascadeLevel(regressor, level.stats, solver_state))
    return replace(state, model=state.model.replace_levels(levels), updates=state.updates + 1)


def isdm_update(
    state: IncrementalSdmState,
    image: ImageLike,
    params: ShapeParams,
    rng: np.random.Generator,
) -> IncrementalSdmState:
    """ Draws K perturbations per level around the tracked estimate from the
        level's own statistics: L * K extraction passes per frame. """
    model = state.model
    columns = list(model.columns)
    centre = params.to_vector()
    samples = []
    for level in model.levels:
        offsets = level.stats.sample(rng, state.n_samples)
        features = []
        for offset in offsets:
            perturbed = centre.copy()
            perturbed[columns] += offset
            features.append(extract(model.extractor, model.pca, image, model.pdm, ShapeParams.from_vector(perturbed)))
        samples.append((np.stack(features, axis=1), offsets.T))
    return isdm_update_samples(state, samples)


def woodbury_inner(state: CrSolverState, block: np.ndarray) -> np.ndarray:
    """ B^-1 + D_S^T V^-1 D_S, the (m+1) x (m+1) matrix the update inverts. """
    try:
        factor = linalg.cho_factor(state.b)
    except linalg.LinAlgError:
        raise DataTermNotInvertibleError("data term not invertible")
    b_inv = linalg.cho_solve(factor, np.eye(state.b.shape[0]))
    if np.linalg.cond(state.b) > 1.0 / np.finfo(float).eps:
        raise DataTermNotInvertibleError("data term not invertible")
    return symmetrize(b_inv + block.T @ state.v_inv @ block)


def iccr_level_update(state: CrSolverState, block: np.ndarray) -> CrSolverState:
    """ V^-1 <- V^-1 - V^-1 D_S (B^-1 + D_S^T V^-1 D_S)^-1 D_S^T V^-1 and
        sum_D <- sum_D + D_S. """
    if block.shape != state.sum_d.shape:
        raise ShapeError(f"Functional block must be {state.sum_d.shape}, got {block.shape}")
    inner = woodbury_inner(state, block)
    projected = state.v_inv @ block
    v_inv = symmetrize(state.v_inv - projected @ linalg.solve(inner, projected.T, assume_a="sym"))
    return CrSolverState(state.a, state.b, state.sum_d + block, v_inv, state.ridge)


def _refreshed(state: CrSolverState, functional_set: FunctionalTrainingSet) -> CrSolverState:
    regularised = functional_set.moment_matrix(state.b) + state.ridge * np.eye(functional_set.feature_dim)
    v_inv = symmetrize(linalg.cho_solve(linalg.cho_factor(regularised), np.eye(regularised.shape[0])))
    return CrSolverState(state.a, state.b, functional_set.sum_d, v_inv, state.ridge)


def iccr_update_block(state: IccrState, block: np.ndarray) -> IccrState:
    """ Applies one full-parameter functional block to every level. All
        levels share the block; each keeps its own data term and V^-1. """
    if not np.all(np.isfinite(block)):
        logger.warning("Rejected iCCR update with a non-finite functional block", updates=state.updates)
        return state
    model = state.model
    regressed = block[:, [0] + [1 + c for c in model.columns]]
    # Blocks are only kept when a refresh will need them.
    functional_set = model.functional_set.append(block) if state.refresh_every is not None else None
    updates = state.updates + 1
    refresh = state.refresh_every is not None and updates % state.refresh_every == 0
    if refresh:
        regressed_set = functional_set.restrict(model.columns)
    levels = []
    for level in model.levels:
        solver_state = iccr_level_update(level.solver_state, regressed)
        if refresh:
            solver_state = _refreshed(solver_state, regressed_set)
        levels.append(CascadeLevel(solver_state.regressor(), level.stats, solver_state))
    if refresh:
        logger.debug("Re-inverted iCCR normal matrices from stored blocks", updates=updates)
    new_model = replace(model, levels=tuple(levels), functional_set=functional_set)
    return replace(state, model=new_model, updates=updates)


def iccr_update(state: IccrState, image: ImageLike, params: ShapeParams, delta_x: float = 1.0) -> IccrState:
    """ Three extraction passes at the tracked estimate, for any number of
        cascade levels. """
    model = state.model
    block = extract_functional_block(model.extractor, model.pca, image, model.pdm, params, delta_x)
    return iccr_update_block(state, block)


class ModelSnapshot:
    """ Holds the published cascade. Readers always get an immutable model;
        writers publish a new one atomically, one update at a time. """

    def __init__(self, model: CascadeModel):
        self._model = model
        self._lock = threading.Lock()
        self._update_lock = threading.Lock()
        self.version = 0

    def current(self) -> CascadeModel:
        with self._lock:
            return self._model

    def publish(self, model: CascadeModel) -> None:
        with self._lock:
            self._model = model
            self.version += 1

    @contextmanager
    def updating(self) -> Iterator[CascadeModel]:
        """ Serialises writers; yields the model the update starts from. """
        with self._update_lock:
            yield self.current()
