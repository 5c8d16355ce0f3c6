""" Evaluatable images. Every image answers intensity queries at arbitrary
    (x, y) pixel coordinates; reads outside the frame clamp to the border. """

from abc import abstractmethod
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image
from scipy.ndimage import map_coordinates

from .exceptions import ModelFormatError


class ImageLike:
    def __init__(self, width: int, height: int):
        if width < 1 or height < 1:
            raise ValueError(f"Image must be at least 1 x 1, got {width} x {height}")
        self.width = int(width)
        self.height = int(height)

    def intensity(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """ Intensity at (x, y); any array shapes that broadcast together. """
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        x = np.clip(x, 0.0, self.width - 1.0)
        y = np.clip(y, 0.0, self.height - 1.0)
        return self._evaluate(x, y)

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= 0) & (x <= self.width - 1) & (y >= 0) & (y <= self.height - 1)

    def rasterize(self) -> np.ndarray:
        """ height x width array sampled at integer pixel centres. """
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return self.intensity(xs.astype(float), ys.astype(float))

    @abstractmethod
    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        pass


class RasterImage(ImageLike):
    """ Pixel array with bilinear interpolation between pixel centres. """

    def __init__(self, pixels: np.ndarray):
        pixels = np.array(pixels, dtype=float)
        if pixels.ndim != 2:
            raise ValueError(f"Expected a 2-D grayscale array, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ValueError("Pixel intensities must be finite")
        super().__init__(width=pixels.shape[1], height=pixels.shape[0])
        pixels.setflags(write=False)
        self.pixels = pixels

    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        coordinates = np.stack([y.reshape(-1), x.reshape(-1)])
        values = map_coordinates(self.pixels, coordinates, order=1, mode="nearest")
        return values.reshape(x.shape)


class ConstantImage(ImageLike):
    def __init__(self, width: int, height: int, value: float):
        super().__init__(width, height)
        self.value = float(value)

    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.full(x.shape, self.value)


PathLike = Union[str, Path]

SUPPORTED_SUFFIXES = (".pgm", ".png")


def load_image(path: PathLike) -> RasterImage:
    """ Reads an 8-bit grayscale PGM or PNG into intensities in [0, 1]. """
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ModelFormatError(
            f"{path.suffix} is an invalid image type. Valid types include {list(SUPPORTED_SUFFIXES)}"
        )
    with Image.open(path) as handle:
        pixels = np.asarray(handle.convert("L"), dtype=float) / 255.0
    return RasterImage(pixels)


def save_image(path: PathLike, image: ImageLike) -> None:
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ModelFormatError(
            f"{path.suffix} is an invalid image type. Valid types include {list(SUPPORTED_SUFFIXES)}"
        )
    pixels = np.clip(np.rint(image.rasterize() * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path)
