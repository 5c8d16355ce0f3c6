from typing import Dict

import numpy as np

from ..image import ImageLike
from .extractor import FeatureExtractor

GRADIENT_FLOOR = 1e-6
NORM_FLOOR = 1e-8


class GradientHistogram(FeatureExtractor):
    """ HOG-like descriptor: a cells x cells grid of oriented gradient
        histograms around each landmark, orientations soft-binned over
        [0, 2*pi) and the whole landmark descriptor L2-normalised. """

    kind = "gradient-histogram"

    def __init__(self, n_points: int, cells: int = 4, cell_size: int = 4, orientations: int = 8):
        super().__init__(n_points)
        if cells < 1 or cell_size < 1 or orientations < 2:
            raise ValueError("cells, cell_size must be >= 1 and orientations >= 2")
        self.cells = int(cells)
        self.cell_size = int(cell_size)
        self.orientations = int(orientations)
        side = self.cells * self.cell_size
        steps = np.arange(side, dtype=float) - (side - 1) / 2.0
        dy, dx = np.meshgrid(steps, steps, indexing="ij")
        self._grid = np.stack([dx, dy], axis=-1)

    @property
    def per_landmark_dim(self) -> int:
        return self.cells * self.cells * self.orientations

    @property
    def patch_radius(self) -> float:
        return self.cells * self.cell_size / 2.0

    def config(self) -> Dict:
        return {
            "kind": self.kind,
            "n_points": self.n_points,
            "cells": self.cells,
            "cell_size": self.cell_size,
            "orientations": self.orientations,
        }

    def _sample(self, image: ImageLike, points: np.ndarray, dx: float, dy: float) -> np.ndarray:
        grid = points[..., :, None, None, :] + self._grid + np.array([dx, dy])
        return image.intensity(grid[..., 0], grid[..., 1])

    def _describe(self, image: ImageLike, points: np.ndarray) -> np.ndarray:
        gx = 0.5 * (self._sample(image, points, 1.0, 0.0) - self._sample(image, points, -1.0, 0.0))
        gy = 0.5 * (self._sample(image, points, 0.0, 1.0) - self._sample(image, points, 0.0, -1.0))
        magnitude = np.sqrt(gx * gx + gy * gy + GRADIENT_FLOOR ** 2)
        position = np.mod(np.arctan2(gy, gx), 2 * np.pi) / (2 * np.pi) * self.orientations
        lower = np.floor(position).astype(int) % self.orientations
        upper = (lower + 1) % self.orientations
        weight_upper = position - np.floor(position)

        one_hot = np.eye(self.orientations)
        votes = magnitude[..., None] * (
            (1.0 - weight_upper)[..., None] * one_hot[lower] + weight_upper[..., None] * one_hot[upper]
        )

        lead = votes.shape[:-3]
        votes = votes.reshape(lead + (self.cells, self.cell_size, self.cells, self.cell_size, self.orientations))
        histogram = votes.sum(axis=(-4, -2)).reshape(lead + (self.per_landmark_dim,))
        norm = np.sqrt(np.sum(histogram * histogram, axis=-1, keepdims=True) + NORM_FLOOR)
        return histogram / norm
