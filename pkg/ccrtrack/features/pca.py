from dataclasses import dataclass
from typing import Sequence

import numpy as np
from loguru import logger

from ..exceptions import InsufficientDataError


@dataclass(frozen=True)
class FeaturePca:
    mean: np.ndarray
    """ Length-D mean of the raw training descriptors. """

    projection: np.ndarray
    """ d x D matrix with orthonormal rows. """

    explained_variance: np.ndarray
    total_variance: float

    def __post_init__(self):
        for name in ("mean", "projection", "explained_variance"):
            value = np.array(getattr(self, name), dtype=float)
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def d(self) -> int:
        return self.projection.shape[0]

    @property
    def raw_dim(self) -> int:
        return self.projection.shape[1]

    def project(self, raw: np.ndarray) -> np.ndarray:
        return self.projection @ (raw - self.mean)

    def reconstruct(self, reduced: np.ndarray) -> np.ndarray:
        return self.projection.T @ reduced + self.mean

    def reconstruction_score(self, raw: np.ndarray) -> float:
        """ Fraction of the centred descriptor energy outside the retained
            subspace; 0 for descriptors that look like training data. """
        centred = raw - self.mean
        energy = float(centred @ centred)
        if energy == 0.0:
            return 0.0
        kept = self.projection @ centred
        return max(0.0, 1.0 - float(kept @ kept) / energy)

    def explained_fractions(self) -> np.ndarray:
        return self.explained_variance / self.total_variance


def fit_feature_pca(raw_vectors: Sequence[np.ndarray], d: int) -> FeaturePca:
    data = np.asarray(raw_vectors, dtype=float)
    if data.ndim != 2:
        raise ValueError("raw_vectors must be a sequence of equal-length vectors")
    n_samples = data.shape[0]
    if d < 1:
        raise ValueError(f"Target dimension must be positive, got {d}")
    if n_samples < d:
        raise InsufficientDataError(f"PCA to d={d} needs at least {d} samples, got {n_samples}")
    mean = data.mean(axis=0)
    centred = data - mean
    _, singular, rows = np.linalg.svd(centred, full_matrices=False)
    tolerance = singular[0] * max(centred.shape) * np.finfo(float).eps if singular.size else 0.0
    rank = int(np.sum(singular > tolerance))
    if d > rank:
        raise InsufficientDataError(
            f"Cannot keep {d} feature dimensions; the achievable rank is {rank}"
        )
    variances = singular ** 2 / max(n_samples - 1, 1)
    logger.info(
        "Fitted feature PCA",
        raw_dim=data.shape[1],
        d=d,
        n_samples=n_samples,
        kept_fraction=float(variances[:d].sum() / variances.sum()),
    )
    return FeaturePca(mean, rows[:d], variances[:d], float(variances.sum()))
