from abc import abstractmethod
from typing import Dict, Tuple

import numpy as np

from ..exceptions import ShapeError, ShapeOutOfFrameError
from ..image import ImageLike
from .counter import record_pass


class FeatureExtractor:
    """ Maps an image and a set of landmarks to a raw descriptor of length
        D = n_points * per_landmark_dim, laid out landmark by landmark.
        Each landmark's block depends only on that landmark's position. """

    kind: str = ""

    def __init__(self, n_points: int):
        if n_points < 3:
            raise ShapeError(f"Extractors need at least 3 landmarks, got {n_points}")
        self.n_points = n_points

    @property
    @abstractmethod
    def per_landmark_dim(self) -> int:
        pass

    @property
    def raw_dim(self) -> int:
        return self.n_points * self.per_landmark_dim

    @abstractmethod
    def _describe(self, image: ImageLike, points: np.ndarray) -> np.ndarray:
        """ points: (..., n, 2) -> descriptors (..., n, per_landmark_dim) """
        pass

    @abstractmethod
    def config(self) -> Dict:
        """ Constructor arguments, for serialisation. """
        pass

    def _check(self, image: ImageLike, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.shape != (self.n_points, 2):
            raise ShapeError(f"Expected {self.n_points} x 2 landmarks, got {points.shape}")
        if not np.any(image.contains(points[:, 0], points[:, 1])):
            raise ShapeOutOfFrameError("shape out of frame")
        return points

    def describe(self, image: ImageLike, points: np.ndarray) -> np.ndarray:
        """ One extraction pass at `points`; returns the raw D-vector. """
        points = self._check(image, points)
        record_pass()
        return self._describe(image, points).reshape(-1)

    def stencil(self, image: ImageLike, points: np.ndarray, axis: int, delta: float) -> Tuple[np.ndarray, np.ndarray]:
        """ One extraction pass evaluating the whole shape shifted by +delta
            and -delta along `axis` (0 = x, 1 = y); two evaluations. """
        points = self._check(image, points)
        if delta <= 0:
            raise ValueError(f"delta must be positive, got {delta}")
        shift = np.zeros(2)
        shift[axis] = delta
        record_pass(evaluations=2)
        both = self._describe(image, np.stack([points + shift, points - shift]))
        return both[0].reshape(-1), both[1].reshape(-1)
