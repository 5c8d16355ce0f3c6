from typing import Dict

import numpy as np

from ..image import ImageLike
from .extractor import FeatureExtractor


class PixelPatch(FeatureExtractor):
    """ Raw intensities in a (2r+1)^2 window centred on each landmark. """

    kind = "pixel-patch"

    def __init__(self, n_points: int, patch_radius: int = 8):
        super().__init__(n_points)
        if patch_radius < 1:
            raise ValueError(f"patch_radius must be at least 1, got {patch_radius}")
        self.patch_radius = int(patch_radius)
        steps = np.arange(-self.patch_radius, self.patch_radius + 1, dtype=float)
        dy, dx = np.meshgrid(steps, steps, indexing="ij")
        self._offsets = np.stack([dx.reshape(-1), dy.reshape(-1)], axis=1)

    @property
    def per_landmark_dim(self) -> int:
        return (2 * self.patch_radius + 1) ** 2

    def config(self) -> Dict:
        return {"kind": self.kind, "n_points": self.n_points, "patch_radius": self.patch_radius}

    def _describe(self, image: ImageLike, points: np.ndarray) -> np.ndarray:
        samples = points[..., :, None, :] + self._offsets
        return image.intensity(samples[..., 0], samples[..., 1])
