""" Landmark annotation files in the common "pts" layout:

    version: 1
    n_points: 3
    {
    10.0 20.0
    ...
    }
"""

from pathlib import Path
from typing import Union

import numpy as np

from .exceptions import ModelFormatError
from .pdm import Shape


def read_pts(path: Union[str, Path]) -> Shape:
    lines = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    n_points = None
    for line in lines:
        if line.lower().startswith("n_points"):
            try:
                n_points = int(line.split(":", 1)[1])
            except (IndexError, ValueError):
                raise ModelFormatError(f"{path}: malformed n_points header {line!r}")
            break
    if n_points is None:
        raise ModelFormatError(f"{path}: missing n_points header")
    try:
        start = lines.index("{") + 1
        end = lines.index("}", start)
    except ValueError:
        raise ModelFormatError(f"{path}: missing '{{' or '}}' around the point list")
    rows = [line.split() for line in lines[start:end]]
    if len(rows) != n_points:
        raise ModelFormatError(f"{path}: header says {n_points} points, found {len(rows)}")
    try:
        points = np.array([[float(x), float(y)] for x, y in rows])
    except ValueError:
        raise ModelFormatError(f"{path}: every point row must hold two numbers")
    return Shape(points)


def write_pts(path: Union[str, Path], shape: Shape) -> None:
    rows = "\n".join(f"{x:.6f} {y:.6f}" for x, y in shape.points)
    Path(path).write_text(f"version: 1\nn_points: {shape.n_points}\n{{\n{rows}\n}}\n")
