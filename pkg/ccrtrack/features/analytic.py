from typing import Dict

import numpy as np

from ..image import ImageLike
from .extractor import FeatureExtractor


class AnalyticFeatures(FeatureExtractor):
    """ Closed-form features of landmark coordinates, for oracle checks:

        f_i(x_i, y_i) = W_i [x_i, y_i] + b_i + amplitude * sin(Omega_i [x_i, y_i])

        The image is ignored. With amplitude 0 the map is affine. """

    kind = "analytic"

    def __init__(self, n_points: int, per_landmark: int = 4, amplitude: float = 0.0, frequency: float = 0.05, seed: int = 0):
        super().__init__(n_points)
        self.per_landmark = int(per_landmark)
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self.weights = rng.standard_normal((n_points, self.per_landmark, 2))
        self.offsets = rng.standard_normal((n_points, self.per_landmark))
        self.frequencies = self.frequency * rng.standard_normal((n_points, self.per_landmark, 2))

    @property
    def per_landmark_dim(self) -> int:
        return self.per_landmark

    def config(self) -> Dict:
        return {
            "kind": self.kind,
            "n_points": self.n_points,
            "per_landmark": self.per_landmark,
            "amplitude": self.amplitude,
            "frequency": self.frequency,
            "seed": self.seed,
        }

    def _describe(self, image: ImageLike, points: np.ndarray) -> np.ndarray:
        linear = np.einsum("nkc,...nc->...nk", self.weights, points) + self.offsets
        if self.amplitude == 0.0:
            return linear
        phase = np.einsum("nkc,...nc->...nk", self.frequencies, points)
        return linear + self.amplitude * np.sin(phase)

    def coordinate_jacobian(self, points: np.ndarray) -> np.ndarray:
        """ d f_i / d (x_i, y_i) as an (n, per_landmark, 2) array. """
        if self.amplitude == 0.0:
            return self.weights.copy()
        phase = np.einsum("nkc,nc->nk", self.frequencies, points)
        return self.weights + self.amplitude * np.cos(phase)[..., None] * self.frequencies
