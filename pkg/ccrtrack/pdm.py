""" Point Distribution Model: shapes, similarity transforms and the PCA
    basis of non-rigid deformation, s = t_q(s0 + B c).

    Shapes are stored as n x 2 arrays; the 2n vector layout used by the
    basis and the shape Jacobian is blocked, [x_1..x_n, y_1..y_n]. """

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from loguru import logger

from .constants import PROCRUSTES_MAX_ITERATIONS, PROCRUSTES_TOLERANCE, RIGID_DIM
from .exceptions import ProcrustesError, ShapeError, ZeroVarianceError


@dataclass(frozen=True)
class Shape:
    points: np.ndarray
    """ n x 2 landmark coordinates in pixels. """

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ShapeError(f"A shape is an n x 2 array, got {points.shape}")
        if points.shape[0] < 3:
            raise ShapeError(f"A shape needs at least 3 landmarks, got {points.shape[0]}")
        if not np.all(np.isfinite(points)):
            raise ShapeError("Shape coordinates must be finite")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.points[:, 0], self.points[:, 1]])

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "Shape":
        vector = np.asarray(vector, dtype=float)
        n = vector.shape[0] // 2
        return cls(np.stack([vector[:n], vector[n:]], axis=1))

    def translated(self, tx: float, ty: float) -> "Shape":
        return Shape(self.points + np.array([tx, ty]))


@dataclass(frozen=True)
class RigidParams:
    """ Similarity transform. Regression works on the linearised view
        (a, b, tx, ty) with a = scale*cos(rotation) - 1 and
        b = scale*sin(rotation). """

    scale: float = 1.0
    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ShapeError(f"Rigid scale must be positive, got {self.scale}")

    @property
    def a(self) -> float:
        return self.scale * math.cos(self.rotation) - 1.0

    @property
    def b(self) -> float:
        return self.scale * math.sin(self.rotation)

    def to_linear(self) -> np.ndarray:
        return np.array([self.a, self.b, self.tx, self.ty])

    @classmethod
    def from_linear(cls, a: float, b: float, tx: float, ty: float) -> "RigidParams":
        scale = math.hypot(1.0 + a, b)
        if scale == 0.0:
            raise ProcrustesError("Procrustes singular: similarity transform has zero scale")
        return cls(scale=scale, rotation=math.atan2(b, 1.0 + a), tx=float(tx), ty=float(ty))


@dataclass(frozen=True)
class ShapeParams:
    rigid: RigidParams = field(default_factory=RigidParams)
    flexible: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        flexible = np.array(self.flexible, dtype=float).reshape(-1)
        flexible.setflags(write=False)
        object.__setattr__(self, "flexible", flexible)

    @property
    def dim(self) -> int:
        return RIGID_DIM + self.flexible.shape[0]

    def to_vector(self) -> np.ndarray:
        """ p = [a, b, tx, ty, c_1..c_k] """
        return np.concatenate([self.rigid.to_linear(), self.flexible])

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "ShapeParams":
        vector = np.asarray(vector, dtype=float).reshape(-1)
        if vector.shape[0] < RIGID_DIM:
            raise ShapeError(f"A parameter vector has at least {RIGID_DIM} entries")
        if not np.all(np.isfinite(vector)):
            raise ShapeError("Shape parameters must be finite")
        return cls(RigidParams.from_linear(*vector[:RIGID_DIM]), vector[RIGID_DIM:])


@dataclass(frozen=True)
class PdmModel:
    mean_shape: Shape
    """ s0, centred on the origin. """

    basis: np.ndarray
    """ 2n x k orthonormal basis of flexible deformation (blocked layout). """

    eigenvalues: np.ndarray
    """ Variance carried by each basis column, sorted descending. """

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        eigenvalues = np.array(self.eigenvalues, dtype=float).reshape(-1)
        n2 = 2 * self.mean_shape.n_points
        if basis.ndim != 2 or basis.shape[0] != n2:
            raise ShapeError(f"Basis must be {n2} x k, got {basis.shape}")
        if basis.shape[1] != eigenvalues.shape[0]:
            raise ShapeError("One eigenvalue is required per basis column")
        gram = basis.T @ basis
        if not np.allclose(gram, np.eye(basis.shape[1]), rtol=0.0, atol=1e-10):
            raise ShapeError("Basis columns are not orthonormal")
        if np.any(eigenvalues <= 0) or np.any(np.diff(eigenvalues) > 0):
            raise ShapeError("Eigenvalues must be positive and sorted descending")
        basis.setflags(write=False)
        eigenvalues.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "eigenvalues", eigenvalues)

    @property
    def n_points(self) -> int:
        return self.mean_shape.n_points

    @property
    def n_modes(self) -> int:
        return self.basis.shape[1]

    @property
    def n_params(self) -> int:
        return RIGID_DIM + self.n_modes

    def identity_params(self) -> ShapeParams:
        return ShapeParams(RigidParams(), np.zeros(self.n_modes))

    def project(self, shape: Shape) -> Tuple[Shape, float]:
        """ Best rank-k reconstruction of `shape` and its residual energy. """
        reconstruction = compose(self, decompose(self, shape))
        residual = float(np.sum((shape.points - reconstruction.points) ** 2))
        return reconstruction, residual


def _split(vector: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = vector.shape[0] // 2
    return vector[:n], vector[n:]


def _apply_similarity(vector: np.ndarray, alpha: float, beta: float, tx: float, ty: float) -> np.ndarray:
    u, v = _split(vector)
    return np.concatenate([alpha * u - beta * v + tx, beta * u + alpha * v + ty])


def _invert_similarity(vector: np.ndarray, alpha: float, beta: float, tx: float, ty: float) -> np.ndarray:
    x, y = _split(vector)
    x = x - tx
    y = y - ty
    norm = alpha * alpha + beta * beta
    return np.concatenate([(alpha * x + beta * y) / norm, (alpha * y - beta * x) / norm])


def _centre(vector: np.ndarray) -> np.ndarray:
    u, v = _split(vector)
    return np.concatenate([u - u.mean(), v - v.mean()])


def _rotate_quarter(vector: np.ndarray) -> np.ndarray:
    u, v = _split(vector)
    return np.concatenate([-v, u])


def _fit_similarity(reference: np.ndarray, target: np.ndarray) -> Tuple[float, float, float, float]:
    """ Least-squares similarity (alpha, beta, tx, ty) taking the centred
        `reference` onto `target`. The four directions {ref, rot(ref), 1x, 1y}
        are mutually orthogonal so the fit is a plain projection. """
    x, y = _split(target)
    tx, ty = float(x.mean()), float(y.mean())
    centred = np.concatenate([x - tx, y - ty])
    ref_energy = float(reference @ reference)
    scale_floor = 1e-12 * (1.0 + float(np.abs(target).max()))
    if ref_energy == 0.0 or np.linalg.norm(centred) <= scale_floor:
        raise ProcrustesError("Procrustes singular: all landmarks coincide")
    alpha = float(centred @ reference) / ref_energy
    beta = float(centred @ _rotate_quarter(reference)) / ref_energy
    if alpha * alpha + beta * beta == 0.0:
        raise ProcrustesError("Procrustes singular: shape is orthogonal to the mean shape")
    return alpha, beta, tx, ty


def compose(model: PdmModel, params: ShapeParams) -> Shape:
    """ s = t_q(s0 + B c) """
    if params.flexible.shape[0] != model.n_modes:
        raise ShapeError(
            f"Expected {model.n_modes} flexible parameters, got {params.flexible.shape[0]}"
        )
    local = model.mean_shape.to_vector() + model.basis @ params.flexible
    rigid = params.rigid
    return Shape.from_vector(_apply_similarity(local, 1.0 + rigid.a, rigid.b, rigid.tx, rigid.ty))


def decompose(model: PdmModel, shape: Shape) -> ShapeParams:
    """ Similarity-align `shape` to the mean shape, then project the residual
        onto the basis. Exact inverse of `compose` for in-span shapes. """
    if shape.n_points != model.n_points:
        raise ShapeError(f"Expected {model.n_points} landmarks, got {shape.n_points}")
    target = shape.to_vector()
    mean = model.mean_shape.to_vector()
    alpha, beta, tx, ty = _fit_similarity(mean, target)
    local = _invert_similarity(target, alpha, beta, tx, ty)
    flexible = model.basis.T @ (local - mean)
    return ShapeParams(RigidParams.from_linear(alpha - 1.0, beta, tx, ty), flexible)


def shape_jacobian(model: PdmModel, params: ShapeParams) -> np.ndarray:
    """ ds/dp as a 2n x m matrix, rows in blocked [x; y] layout and columns
        ordered as ShapeParams.to_vector(). """
    n = model.n_points
    local = model.mean_shape.to_vector() + model.basis @ params.flexible
    u, v = _split(local)
    alpha = 1.0 + params.rigid.a
    beta = params.rigid.b
    jacobian = np.zeros((2 * n, model.n_params))
    jacobian[:n, 0], jacobian[n:, 0] = u, v
    jacobian[:n, 1], jacobian[n:, 1] = -v, u
    jacobian[:n, 2] = 1.0
    jacobian[n:, 3] = 1.0
    bu, bv = model.basis[:n], model.basis[n:]
    jacobian[:n, RIGID_DIM:] = alpha * bu - beta * bv
    jacobian[n:, RIGID_DIM:] = beta * bu + alpha * bv
    return jacobian


def _similarity_frame(reference: np.ndarray) -> np.ndarray:
    """ Orthonormal basis of the similarity tangent space at `reference`. """
    n = reference.shape[0] // 2
    ones_x = np.concatenate([np.ones(n), np.zeros(n)])
    ones_y = np.concatenate([np.zeros(n), np.ones(n)])
    directions = [reference, _rotate_quarter(reference), ones_x, ones_y]
    return np.stack([d / np.linalg.norm(d) for d in directions], axis=1)


def _principal_modes(deviations: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """ Eigen-decomposition of the sample covariance of the rows of
        `deviations`, using the Gram matrix when there are fewer samples
        than dimensions. Returns (eigenvalues desc, 2n x r basis). """
    n_samples, dim = deviations.shape
    centred = deviations - deviations.mean(axis=0)
    if dim > n_samples:
        gram = centred @ centred.T / (n_samples - 1)
        values, vectors = np.linalg.eigh(gram)
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]
        keep = values > values[0] * 1e-12
        values, vectors = values[keep], vectors[:, keep]
        basis = centred.T @ vectors / np.sqrt(values * (n_samples - 1))
    else:
        covariance = centred.T @ centred / (n_samples - 1)
        values, vectors = np.linalg.eigh(covariance)
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]
        keep = values > values[0] * 1e-12
        values, basis = values[keep], vectors[:, keep]
    return values, basis


def generalized_procrustes(vectors: Sequence[np.ndarray]) -> Tuple[np.ndarray, List[np.ndarray]]:
    """ Iteratively aligns every shape vector to a running mean whose size
        is held at the average centroid size. Returns (mean, aligned). """
    sizes = [np.linalg.norm(_centre(v)) for v in vectors]
    target_size = float(np.mean(sizes))
    seed = int(np.argmax(sizes))
    if sizes[seed] == 0.0:
        raise ProcrustesError("Procrustes singular: all landmarks coincide")
    reference = _centre(vectors[seed])
    reference *= target_size / np.linalg.norm(reference)

    for iteration in range(PROCRUSTES_MAX_ITERATIONS):
        aligned = [_invert_similarity(v, *_fit_similarity(reference, v)) for v in vectors]
        mean = _centre(np.mean(aligned, axis=0))
        mean *= target_size / np.linalg.norm(mean)
        change = np.linalg.norm(mean - reference) / target_size
        reference = mean
        if change < PROCRUSTES_TOLERANCE and iteration > 0:
            break
    else:
        logger.warning("Procrustes alignment hit the iteration cap", iterations=PROCRUSTES_MAX_ITERATIONS)

    aligned = [_invert_similarity(v, *_fit_similarity(reference, v)) for v in vectors]
    return reference, aligned


def train_pdm(shapes: Sequence[Shape], variance_kept: float = 0.98) -> PdmModel:
    if len(shapes) < 2:
        raise ShapeError(f"At least 2 shapes are required, got {len(shapes)}")
    n_points = shapes[0].n_points
    if any(s.n_points != n_points for s in shapes):
        raise ShapeError("All training shapes must have the same number of landmarks")
    if not 0.0 < variance_kept <= 1.0:
        raise ValueError(f"variance_kept must lie in (0, 1], got {variance_kept}")

    vectors = [s.to_vector() for s in shapes]
    mean, aligned = generalized_procrustes(vectors)

    # Deviations live in the orthogonal complement of the similarity tangent
    # space, so rigid and flexible parameters never compete.
    frame = _similarity_frame(mean)
    deviations = np.stack(aligned) - mean
    deviations -= (deviations @ frame) @ frame.T

    size = np.linalg.norm(mean)
    total_variance = float(np.sum((deviations - deviations.mean(axis=0)) ** 2)) / (len(shapes) - 1)
    if total_variance <= 1e-24 * size * size * mean.shape[0]:
        raise ZeroVarianceError("zero shape variance")

    values, basis = _principal_modes(deviations)
    basis -= frame @ (frame.T @ basis)
    basis, triangular = np.linalg.qr(basis)
    basis *= np.sign(np.diag(triangular))
    cumulative = np.cumsum(values) / np.sum(values)
    n_modes = int(np.searchsorted(cumulative, variance_kept - 1e-12) + 1)
    n_modes = min(n_modes, values.shape[0])

    logger.info(
        "Trained point distribution model",
        n_shapes=len(shapes),
        n_points=n_points,
        n_modes=n_modes,
        variance_kept=float(cumulative[n_modes - 1]),
    )
    return PdmModel(Shape.from_vector(mean), basis[:, :n_modes], values[:n_modes])
