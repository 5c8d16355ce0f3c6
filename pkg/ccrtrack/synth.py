""" Synthetic face-like sequences with known ground truth.

    An identity is a set of compactly supported blobs attached to the
    landmarks of a face template plus a linear background. All identities
    jitter one shared appearance template, so a model trained on some
    identities sees familiar texture on the others. Images are
    evaluated analytically at any coordinate, so feature Jacobians are
    smooth and exact finite-difference studies are possible. """

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .annotations import read_pts, write_pts
from .constants import SEQUENCE_FORMAT_VERSION
from .exceptions import InsufficientDataError, ModelFormatError, ShapeError
from .image import ImageLike, load_image, save_image
from .pdm import PdmModel, RigidParams, Shape, ShapeParams, compose, decompose
from .regression import PerturbationStats

PathLike = Union[str, Path]

DEFAULT_GAPS = (1, 2, 3, 5)

BACKGROUND_WEIGHT = 0.3

APPEARANCE_SEED = 0


def _twelve_point_template() -> Tuple[np.ndarray, Tuple[int, int]]:
    points = np.array([
        [-0.50, -0.25],  # left eye, outer corner
        [-0.18, -0.25],
        [0.18, -0.25],
        [0.50, -0.25],  # right eye, outer corner
        [-0.36, -0.52],
        [0.36, -0.52],
        [0.00, 0.08],
        [-0.14, 0.18],
        [0.14, 0.18],
        [-0.30, 0.46],
        [0.30, 0.46],
        [0.00, 0.78],
    ])
    return points, (0, 3)


def _forty_nine_point_template() -> Tuple[np.ndarray, Tuple[int, int]]:
    """ Inner-face layout: brows 0-9, nose 10-18, left eye 19-24, right eye
        25-30, mouth 31-48. Each eye is traced from angle pi, so 19 and 28
        are the outer corners. """
    t = np.linspace(0.0, 1.0, 5)
    arch = -0.55 - 0.08 * np.sin(np.pi * t)
    parts = [
        np.stack([np.linspace(-0.62, -0.12, 5), arch], axis=1),
        np.stack([np.linspace(0.12, 0.62, 5), arch], axis=1),
        np.stack([np.zeros(4), np.linspace(-0.22, 0.05, 4)], axis=1),
        np.stack([np.linspace(-0.16, 0.16, 5), 0.16 + 0.04 * (1 - np.abs(np.linspace(-1, 1, 5)))], axis=1),
    ]
    angles = np.pi + np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)
    for centre in (-0.33, 0.33):
        parts.append(np.stack([centre + 0.17 * np.cos(angles), -0.25 + 0.06 * np.sin(angles)], axis=1))
    outer = np.pi + np.linspace(0.0, 2.0 * np.pi, 12, endpoint=False)
    parts.append(np.stack([0.32 * np.cos(outer), 0.48 + 0.12 * np.sin(outer)], axis=1))
    inner = np.pi + np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)
    parts.append(np.stack([0.2 * np.cos(inner), 0.48 + 0.04 * np.sin(inner)], axis=1))
    return np.concatenate(parts), (19, 28)


def face_template(n_points: int = 12, inter_ocular: float = 48.0) -> Tuple[Shape, Tuple[int, int]]:
    """ Canonical face centred on the origin with the two outer eye
        corners `inter_ocular` pixels apart. """
    if n_points == 12:
        points, eyes = _twelve_point_template()
    elif n_points == 49:
        points, eyes = _forty_nine_point_template()
    else:
        raise ValueError(f"{n_points} is an invalid template size. Valid sizes include [12, 49]")
    points = points - points.mean(axis=0)
    scale = inter_ocular / np.linalg.norm(points[eyes[1]] - points[eyes[0]])
    return Shape(points * scale), eyes


def make_training_shapes(
    template: Shape,
    count: int,
    seed: int = 0,
    n_generators: int = 6,
    deformation: float = 0.08,
    rotation: float = 0.15,
    scale_range: Tuple[float, float] = (0.9, 1.1),
) -> List[Shape]:
    """ Shapes drawn from a random linear deformation model around
        `template`, each under a random similarity. `deformation` is a
        fraction of the template size. """
    if count < 2:
        raise ValueError(f"Need at least 2 shapes, got {count}")
    rng = np.random.default_rng(seed)
    centred = template.points - template.points.mean(axis=0)
    size = float(np.sqrt(np.mean(np.sum(centred ** 2, axis=1))))
    generators = rng.standard_normal((n_generators, template.n_points, 2)) * deformation * size
    shapes = []
    for _ in range(count):
        local = centred + np.tensordot(rng.standard_normal(n_generators), generators, axes=1)
        angle = rng.uniform(-rotation, rotation)
        scale = rng.uniform(*scale_range)
        rotate = scale * np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        shapes.append(Shape(local @ rotate.T + rng.uniform(-5.0, 5.0, size=2)))
    return shapes


def _bump(rho2: np.ndarray) -> np.ndarray:
    """ exp(1 - 1 / (1 - rho^2)) inside the unit disc, 0 outside. """
    values = np.zeros_like(rho2)
    inside = rho2 < 1.0
    values[inside] = np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return values


class BlobImage(ImageLike):
    """ I = 0.3 bg + 0.7 (1 - prod_i (1 - w_i g_i)), with g_i a C-infinity
        bump of compact support and bg a linear ramp in [0, 1]. """

    def __init__(
        self,
        width: int,
        height: int,
        centres: np.ndarray,
        radii: np.ndarray,
        weights: np.ndarray,
        gradient: Tuple[float, float] = (0.0, 0.0),
    ):
        super().__init__(width, height)
        self.centres = np.asarray(centres, dtype=float).reshape(-1, 2)
        self.radii = np.asarray(radii, dtype=float).reshape(-1)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        if not (self.centres.shape[0] == self.radii.shape[0] == self.weights.shape[0]):
            raise ShapeError("Need one radius and one weight per blob")
        if np.any(self.radii <= 0) or np.any((self.weights < 0) | (self.weights > 1)):
            raise ValueError("Blob radii must be positive and weights in [0, 1]")
        if abs(gradient[0]) + abs(gradient[1]) > 1.0:
            raise ValueError(f"Background gradient {gradient} leaves [0, 1]")
        self.gradient = (float(gradient[0]), float(gradient[1]))

    def background(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        gx, gy = self.gradient
        return 0.5 + gx * (x / self.width - 0.5) + gy * (y / self.height - 0.5)

    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        untouched = np.ones(x.shape)
        for (cx, cy), radius, weight in zip(self.centres, self.radii, self.weights):
            rho2 = ((x - cx) ** 2 + (y - cy) ** 2) / (radius * radius)
            untouched *= 1.0 - weight * _bump(rho2)
        return BACKGROUND_WEIGHT * self.background(x, y) + (1.0 - BACKGROUND_WEIGHT) * (1.0 - untouched)


class BurstImage(ImageLike):
    """ `base` blended with a smooth interference pattern, standing in for
        flashes and occluders. """

    def __init__(self, base: ImageLike, strength: float, seed: int = 0):
        super().__init__(base.width, base.height)
        if not 0.0 <= strength <= 1.0:
            raise ValueError(f"Burst strength must lie in [0, 1], got {strength}")
        rng = np.random.default_rng(seed)
        self.base = base
        self.strength = float(strength)
        self.frequency = rng.uniform(0.15, 0.35, size=2) * rng.choice([-1.0, 1.0], size=2)
        self.phase = rng.uniform(0.0, 2.0 * np.pi)

    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        pattern = 0.5 * (1.0 + np.sin(self.frequency[0] * x + self.frequency[1] * y + self.phase))
        return (1.0 - self.strength) * self.base._evaluate(x, y) + self.strength * pattern


@dataclass(frozen=True)
class SyntheticIdentity:
    seed: int
    pdm: PdmModel
    base_params: ShapeParams
    blob_landmarks: np.ndarray
    """ Landmark index each blob is attached to. """

    blob_offsets: np.ndarray
    blob_radii: np.ndarray
    blob_weights: np.ndarray
    gradient: Tuple[float, float]
    eye_corners: Tuple[int, int]
    width: int = 160
    height: int = 160


@dataclass(frozen=True)
class AppearanceJitter:
    """ Per-identity departures from the shared appearance template. """

    offset: float = 0.5
    """ Blob offset jitter in pixels, uniform in [-offset, offset]. """

    radius: float = 0.05
    """ Relative blob radius jitter. """

    gain: float = 0.08
    """ Relative jitter of the contrast shared by all blobs. """

    weight: float = 0.03
    """ Absolute per-blob weight jitter. """

    gradient: float = 0.05
    """ Absolute background gradient jitter per axis. """


def make_identity(
    pdm: PdmModel,
    eye_corners: Tuple[int, int],
    seed: int = 0,
    width: int = 160,
    height: int = 160,
    blobs_per_landmark: int = 2,
    shape_spread: float = 0.5,
    appearance_seed: int = APPEARANCE_SEED,
    jitter: AppearanceJitter = AppearanceJitter(),
) -> SyntheticIdentity:
    """ Every identity is drawn around one appearance template fixed by
        `appearance_seed`. `seed` picks the identity's base shape and its
        small texture, contrast and background departures from the
        template. """
    n_blobs = pdm.n_points * blobs_per_landmark
    template = np.random.default_rng(appearance_seed)
    offsets = template.uniform(-4.0, 4.0, size=(n_blobs, 2))
    radii = template.uniform(5.0, 9.0, size=n_blobs)
    weights = template.uniform(0.4, 0.85, size=n_blobs)
    gradient = template.uniform(-0.3, 0.3, size=2)

    rng = np.random.default_rng(seed)
    base = ShapeParams(
        RigidParams(1.0, 0.0, width / 2.0, height / 2.0),
        rng.standard_normal(pdm.n_modes) * np.sqrt(pdm.eigenvalues) * shape_spread,
    )
    offsets = offsets + rng.uniform(-jitter.offset, jitter.offset, size=offsets.shape)
    radii = radii * (1.0 + rng.uniform(-jitter.radius, jitter.radius, size=n_blobs))
    gain = 1.0 + rng.uniform(-jitter.gain, jitter.gain)
    weights = np.clip(gain * weights + rng.uniform(-jitter.weight, jitter.weight, size=n_blobs), 0.0, 1.0)
    gradient = np.clip(gradient + rng.uniform(-jitter.gradient, jitter.gradient, size=2), -0.5, 0.5)
    return SyntheticIdentity(
        seed=seed,
        pdm=pdm,
        base_params=base,
        blob_landmarks=np.repeat(np.arange(pdm.n_points), blobs_per_landmark),
        blob_offsets=offsets,
        blob_radii=radii,
        blob_weights=weights,
        gradient=(float(gradient[0]), float(gradient[1])),
        eye_corners=eye_corners,
        width=width,
        height=height,
    )


def render_shape(identity: SyntheticIdentity, shape: Shape) -> BlobImage:
    centres = shape.points[identity.blob_landmarks] + identity.blob_offsets
    return BlobImage(identity.width, identity.height, centres, identity.blob_radii, identity.blob_weights, identity.gradient)


def render_identity(identity: SyntheticIdentity, params: ShapeParams) -> BlobImage:
    return render_shape(identity, compose(identity.pdm, params))


@dataclass(frozen=True)
class MotionModel:
    """ AR(1) per parameter around the identity's base parameters. """

    pull: float = 0.9
    mode_noise: float = 1.0 / 20.0
    """ Per-frame innovation as a fraction of sqrt(eigenvalue). """

    translation_noise: float = 0.6
    similarity_noise: float = 0.004
    burst_probability: float = 0.0
    burst_factor: float = 8.0
    margin: float = 12.0

    def innovation_scales(self, pdm: PdmModel) -> np.ndarray:
        return np.concatenate([
            [self.similarity_noise, self.similarity_noise, self.translation_noise, self.translation_noise],
            self.mode_noise * np.sqrt(pdm.eigenvalues),
        ])


@dataclass(frozen=True)
class Frame:
    image: ImageLike
    shape: Shape
    params: Optional[ShapeParams] = None


@dataclass(frozen=True)
class SyntheticSequence:
    frames: Tuple[Frame, ...]
    eye_corners: Tuple[int, int]
    motion: Optional[MotionModel] = None
    burst_frames: Tuple[int, ...] = ()
    name: str = ""

    def __len__(self) -> int:
        return len(self.frames)


def _keep_in_frame(vector: np.ndarray, pdm: PdmModel, width: int, height: int, margin: float) -> np.ndarray:
    points = compose(pdm, ShapeParams.from_vector(vector)).points
    low = np.array([margin, margin]) - points.min(axis=0)
    high = np.array([width - 1 - margin, height - 1 - margin]) - points.max(axis=0)
    shift = np.clip(0.0, low, high) if np.all(low <= high) else (low + high) / 2.0
    vector = vector.copy()
    vector[2:4] += shift
    return vector


def generate_sequence(
    identity: SyntheticIdentity,
    length: int,
    motion: MotionModel = MotionModel(),
    seed: int = 0,
    name: str = "",
) -> SyntheticSequence:
    """ Smooth AR(1) walk z_t = pull z_{t-1} + noise, started from its
        stationary law. At burst frames the step taken is scaled by
        `burst_factor`. """
    if length < 2:
        raise ValueError(f"A sequence needs at least 2 frames, got {length}")
    rng = np.random.default_rng(seed)
    pdm = identity.pdm
    base = identity.base_params.to_vector()
    scales = motion.innovation_scales(pdm)
    stationary = scales / math.sqrt(1.0 - motion.pull ** 2)
    state = rng.standard_normal(base.shape[0]) * stationary
    frames = []
    bursts = []
    vector = _keep_in_frame(base + state, pdm, identity.width, identity.height, motion.margin)
    for index in range(length):
        if index > 0:
            proposal = motion.pull * state + scales * rng.standard_normal(base.shape[0])
            if rng.uniform() < motion.burst_probability:
                proposal = state + motion.burst_factor * (proposal - state)
                bursts.append(index)
            state = proposal
            vector = _keep_in_frame(base + state, pdm, identity.width, identity.height, motion.margin)
            state = vector - base
        params = ShapeParams.from_vector(vector)
        shape = compose(pdm, params)
        frames.append(Frame(render_shape(identity, shape), shape, params))
    return SyntheticSequence(tuple(frames), identity.eye_corners, motion, tuple(bursts), name)


def inject_bursts(sequence: SyntheticSequence, frames: Sequence[int], strength: float = 0.8, seed: int = 0) -> SyntheticSequence:
    """ Overlays an interference pattern on the given frames and marks them
        as burst frames. Ground truth is unchanged. """
    selected = set(frames)
    if any(index < 0 or index >= len(sequence) for index in selected):
        raise ValueError(f"Burst frames must lie in [0, {len(sequence)})")
    updated = tuple(
        replace(frame, image=BurstImage(frame.image, strength, seed + index)) if index in selected else frame
        for index, frame in enumerate(sequence.frames)
    )
    return replace(sequence, frames=updated, burst_frames=tuple(sorted(set(sequence.burst_frames) | selected)))


@dataclass(frozen=True)
class SequenceStats:
    stats: PerturbationStats
    sample_count: int
    gaps: Tuple[int, ...] = DEFAULT_GAPS


def parameter_differences(sequences: Sequence[SyntheticSequence], gaps: Sequence[int] = DEFAULT_GAPS) -> np.ndarray:
    """ p_{t+g} - p_t for every frame pair at every gap, one row each. """
    if not gaps or any(g < 1 for g in gaps):
        raise ValueError(f"Gaps must be positive integers, got {list(gaps)}")
    rows = []
    for sequence in sequences:
        if len(sequence) < 2:
            raise InsufficientDataError(f"Sequence {sequence.name!r} has fewer than 2 frames")
        if any(frame.params is None for frame in sequence.frames):
            raise InsufficientDataError(f"Sequence {sequence.name!r} has no ground-truth parameters")
        vectors = np.stack([frame.params.to_vector() for frame in sequence.frames])
        for gap in gaps:
            if gap < vectors.shape[0]:
                rows.append(vectors[gap:] - vectors[:-gap])
    return np.concatenate(rows) if rows else np.zeros((0, 0))


def estimate_stats(sequences: Sequence[SyntheticSequence], gaps: Sequence[int] = DEFAULT_GAPS) -> SequenceStats:
    """ Pooled mean and covariance of dp over every pair, each pair
        weighted equally whatever its gap. """
    differences = parameter_differences(sequences, gaps)
    dim = differences.shape[1] if differences.size else 0
    if differences.shape[0] < dim + 1 or differences.shape[0] < 2:
        raise InsufficientDataError(
            f"Need at least {dim + 1} frame pairs for {dim} parameters, got {differences.shape[0]}"
        )
    stats = PerturbationStats.from_samples(differences, shrinkage=0.0)
    logger.info("Estimated sequence statistics", pairs=differences.shape[0], gaps=list(gaps), trace=float(np.trace(stats.covariance)))
    return SequenceStats(stats, differences.shape[0], tuple(gaps))


def attach_params(sequence: SyntheticSequence, pdm: PdmModel) -> SyntheticSequence:
    """ Ground-truth parameters for annotated shapes, by PDM projection. """
    frames = tuple(replace(frame, params=decompose(pdm, frame.shape)) for frame in sequence.frames)
    return replace(sequence, frames=frames)


MANIFEST_NAME = "manifest.json"


def export_sequence(sequence: SyntheticSequence, directory: PathLike, extra: Optional[dict] = None) -> Path:
    """ frame_NNNN.pgm + frame_NNNN.pts per frame and a JSON manifest. """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for index, frame in enumerate(sequence.frames):
        stem = f"frame_{index:04d}"
        save_image(directory / f"{stem}.pgm", frame.image)
        write_pts(directory / f"{stem}.pts", frame.shape)
        names.append(stem)
    manifest = {
        "format_version": SEQUENCE_FORMAT_VERSION,
        "name": sequence.name,
        "frames": names,
        "eye_corners": list(sequence.eye_corners),
        "burst_frames": list(sequence.burst_frames),
    }
    if extra:
        manifest.update(extra)
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_sequence(directory: PathLike, pdm: Optional[PdmModel] = None) -> SyntheticSequence:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise ModelFormatError(f"{directory} has no {MANIFEST_NAME}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != SEQUENCE_FORMAT_VERSION:
        raise ModelFormatError(
            f"Unsupported sequence format {manifest.get('format_version')}, expected {SEQUENCE_FORMAT_VERSION}"
        )
    frames = []
    for stem in manifest["frames"]:
        image = load_image(directory / f"{stem}.pgm")
        frames.append(Frame(image, read_pts(directory / f"{stem}.pts")))
    sequence = SyntheticSequence(
        tuple(frames),
        tuple(manifest["eye_corners"]),
        burst_frames=tuple(manifest.get("burst_frames", ())),
        name=manifest.get("name", directory.name),
    )
    return attach_params(sequence, pdm) if pdm is not None else sequence


def load_sequences(root: PathLike, pdm: Optional[PdmModel] = None) -> List[SyntheticSequence]:
    """ Every sequence directory directly under `root`, in name order. """
    root = Path(root)
    directories = sorted(p for p in root.iterdir() if (p / MANIFEST_NAME).exists())
    if not directories:
        raise InsufficientDataError(f"No sequences found under {root}")
    return [load_sequence(directory, pdm) for directory in directories]
